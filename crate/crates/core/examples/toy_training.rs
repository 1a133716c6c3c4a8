//! Train one toy classifier and write its per-epoch report as JSONL and CSV.
//!
//! cargo run --release --example toy_training -- [mode] [dataset] [out dir]

use hermite_pi::train::{toy_mlp, train, AblationMode, Generator, ToyDataset, TrainConfig, TOY_DEPTH, TOY_HIDDEN};
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let mode: AblationMode = args.next().as_deref().unwrap_or("herpn-basiswise").parse().map_err(anyhow::Error::msg)?;
    let gen: Generator = args.next().as_deref().unwrap_or("gaussian-blobs").parse().map_err(anyhow::Error::msg)?;
    let out = PathBuf::from(args.next().unwrap_or_else(|| ".".into()));

    let data = ToyDataset::new(gen, 400, 400, 1.0, 0);
    let cfg = TrainConfig {
        epochs: 50,
        ..TrainConfig::new(mode, 0)
    };
    let report = train(toy_mlp(mode, 2, TOY_HIDDEN, TOY_DEPTH, 2, 0), &data, &cfg)?;
    for e in report.epochs.iter().step_by(10) {
        println!(
            "epoch {:>3} loss {:.4} train {:.3} test {:.3}",
            e.epoch, e.loss, e.train_acc, e.test_acc
        );
    }
    let s = &report.summary;
    println!("final: test {:.3}, loss variance {:.2e}", s.final_test_acc, s.loss_stability);

    report.write_jsonl(&mut BufWriter::new(File::create(out.join("toy_report.jsonl"))?))?;
    report.write_csv(&mut BufWriter::new(File::create(out.join("toy_report.csv"))?), true)?;
    Ok(())
}
