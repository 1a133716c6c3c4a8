//! Model surgery on residual units: strict replacement, the rewired
//! standard block, and the pre-activation block, then quantization.

use hermite_pi::field::{FieldParams, FixedPointCodec};
use hermite_pi::nn::fixed::quantize;
use hermite_pi::nn::surgery::{herpnize, SurgeryMode};
use hermite_pi::nn::{calibrate, zoo, ModelGraph};

fn summary(m: &ModelGraph) -> String {
    let kinds = ["HerPN", "ReLU", "BatchNorm", "Conv2d", "Residual"];
    let parts: Vec<String> = kinds.iter().map(|k| format!("{k} {}", m.count(k))).collect();
    format!("{:<22} {}", m.name, parts.join(", "))
}

fn main() -> anyhow::Result<()> {
    let codec = FixedPointCodec::new(FieldParams::default());
    for model in [zoo::resnet_unit(4, 8, 1), zoo::pa_resnet_unit(4, 8, 1)] {
        println!("{}", summary(&model));
        match herpnize(&model, SurgeryMode::Strict) {
            Ok(m) => println!("  strict:  {}", summary(&m)),
            Err(e) => println!("  strict:  rejected, {e}"),
        }
        let mut m = herpnize(&model, SurgeryMode::Surgery)?;
        println!("  surgery: {}", summary(&m));

        let x = zoo::Init::new(2).uniform(&[32, 1, 8, 8], 1.0);
        calibrate(&mut m, &x)?;
        let q = quantize(&m, &codec)?;
        println!(
            "  quantized: {} ops, {} activation elements",
            q.program.len(),
            q.activation_elements().iter().sum::<usize>()
        );
    }
    Ok(())
}
