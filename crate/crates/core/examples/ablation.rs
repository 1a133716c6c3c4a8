//! Train the four activation/normalization variants on two-spirals with a
//! shared seed and print their final metrics.
//!
//! cargo run --release --example ablation -- [seed] [epochs] [csv path]

use hermite_pi::train::{train_arm, AblationMode, ToyDataset, TrainConfig, TOY_DEPTH, TOY_HIDDEN};
use std::fs::File;
use std::io::BufWriter;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);
    let csv = args.next();

    let data = ToyDataset::spirals(seed);
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::new(AblationMode::ReluBn, seed)
    };
    let mut out = csv.map(|p| File::create(p).map(BufWriter::new)).transpose()?;
    println!("{:<16} {:>7} {:>9} {:>9} {:>9} {:>12}", "mode", "params", "loss", "train", "test", "loss var");
    for (i, mode) in AblationMode::ALL.into_iter().enumerate() {
        let r = train_arm(mode, &data, &cfg, TOY_HIDDEN, TOY_DEPTH)?;
        let s = &r.summary;
        println!(
            "{:<16} {:>7} {:>9.4} {:>9.3} {:>9.3} {:>12.3e}{}",
            mode.name(),
            s.params,
            s.final_loss,
            s.final_train_acc,
            s.final_test_acc,
            s.loss_stability,
            if s.diverged { "  (diverged)" } else { "" }
        );
        if let Some(w) = out.as_mut() {
            r.write_csv(w, i == 0)?;
        }
    }
    Ok(())
}
