//! ReLU's Hermite coefficients by quadrature against the closed form, and
//! how much of ReLU each truncation degree leaves out.

use hermite_pi::hermite::{hermite_h, relu_expansion_tail, relu_hermite_coeff, HermiteBasis};
use hermite_pi::quadrature::{gauss_hermite, piecewise_gaussian_expectation};

fn main() -> anyhow::Result<()> {
    println!("{:>3} {:>14} {:>14} {:>10}", "n", "closed form", "quadrature", "|diff|");
    for n in 0..=6 {
        let q = piecewise_gaussian_expectation(|x| x.max(0.0) * hermite_h(n, x).unwrap_or(0.0), 16);
        let f = relu_hermite_coeff(n);
        println!("{n:>3} {f:>14.9} {q:>14.9} {:>10.2e}", (f - q).abs());
    }

    let rule = gauss_hermite(128);
    let basis = HermiteBasis::new(4)?;
    println!("\nGram matrix of h_0..h_4 (128-point rule):");
    for i in 0..=4 {
        let row: Vec<String> = (0..=4)
            .map(|j| {
                let g = rule.integrate(|x| {
                    let h = basis.eval(x);
                    h[i] * h[j]
                });
                format!("{g:>8.5}")
            })
            .collect();
        println!("  {}", row.join(" "));
    }

    println!("\nmean squared error of the degree-d expansion under N(0, 1):");
    for d in 0..=6 {
        println!("  d = {d}: {:.5}", relu_expansion_tail(d, 10_000));
    }
    Ok(())
}
