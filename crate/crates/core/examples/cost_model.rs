//! GC vs BT activation costs for the named architectures, plus a measured
//! protocol run checked against its own closed-form traffic.

use hermite_pi::cost::{builder, compare_with_measured, estimate, CostTable, Dataset, Plan, ARCHITECTURES};
use hermite_pi::field::{FieldParams, FixedPointCodec};
use hermite_pi::nn::fixed::quantize;
use hermite_pi::nn::zoo;
use hermite_pi::protocol::{loopback_run, SessionConfig};

fn main() -> anyhow::Result<()> {
    let table = CostTable::default();
    for data in [Dataset::Cifar, Dataset::TinyImageNet] {
        println!("== {data:?}");
        for arch in ARCHITECTURES {
            let p = builder(arch, data)?;
            let e = estimate(&p, &table, &Plan::AllBt)?;
            println!(
                "{arch:<12} {:>2} layers {:>9} elements  online {:>9.1} ms / {:>8.1} MB (GC)  {:>7.1} ms / {:>6.2} MB (BT)",
                p.layers.len(),
                p.total_elements,
                e.all_gc.online.time_us / 1e3,
                e.all_gc.online.comm_kb / 1e3,
                e.all_bt.online.time_us / 1e3,
                e.all_bt.online.comm_kb / 1e3,
            );
        }
    }

    // Keep five layers as exact ReLU.
    let r32 = builder("resnet32", Dataset::Cifar)?;
    let mixed: Plan = "mixed:0,10,20,25,30".parse()?;
    println!("\n{}", estimate(&r32, &table, &mixed)?.render());

    let model = zoo::calibrated(zoo::mlp3(2, 16, 2, 7), 64, 4.0, 1);
    let q = quantize(&model, &FixedPointCodec::new(FieldParams::default()))?;
    let x = zoo::Init::new(1).uniform(&model.input_shape, 4.0);
    let (_, _, t) = loopback_run(&q, &x, 1, SessionConfig::default())?.into_result()?;
    let r = compare_with_measured(&q, &table, &t)?;
    println!("MLP-3 measured vs closed form:");
    for row in &r.rows {
        println!(
            "  step {:>2} {:<10} client {:>4}/{:<4} server {:>4}/{:<4} {}",
            row.step,
            row.label,
            row.measured_client,
            row.analytic_client,
            row.measured_server,
            row.analytic_server,
            if row.exact() { "exact" } else { "MISMATCH" }
        );
    }
    println!(
        "  total {} bytes measured, {} closed form; table all-BT figure {:.0} bytes ({})",
        r.measured_online_bytes, r.analytic_online_bytes, r.table_online_bytes, r.caveat
    );
    Ok(())
}
