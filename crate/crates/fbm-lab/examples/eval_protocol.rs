//! The evaluation statistics: interquartile means, percentile-bootstrap
//! confidence intervals, best-checkpoint selection, and report rendering.
//!
//!     cargo run --release --example eval_protocol

use fbm_lab::evalkit::report::render_bar_svg;
use fbm_lab::evalkit::stats::{binomial_count_interval, bootstrap_ci, iqm};
use fbm_lab::rng::Rng;

fn main() -> fbm_lab::Result<()> {
    // IQM drops the top and bottom quarters
    let scores: Vec<f64> = (1..=20).map(|v| v as f64).collect();
    println!("IQM of 1..20 = {} (drops 5 from each end)", iqm(&scores)?);

    // bootstrap CI of the IQM statistic
    let mut rng = Rng::from_seed(3);
    let noisy: Vec<f64> = (0..10).map(|_| 50.0 + rng.normal() * 12.0).collect();
    let point = iqm(&noisy)?;
    let (lo, hi) = bootstrap_ci(&noisy, 1000, 0.95, &mut rng)?;
    println!("10 rollout scores: IQM {point:.1}, 95% CI [{lo:.1}, {hi:.1}]");

    let big: Vec<f64> = (0..100).map(|_| 50.0 + rng.normal() * 12.0).collect();
    let (lo_b, hi_b) = bootstrap_ci(&big, 1000, 0.95, &mut rng)?;
    println!("100 scores:        IQM {:.1}, 95% CI [{lo_b:.1}, {hi_b:.1}] (narrower)", iqm(&big)?);

    // exact binomial interval used by the flicker-rate checks
    let (clo, chi) = binomial_count_interval(10_000, 0.2, 0.99);
    println!("\nexact binomial 99% interval for 10k draws at p = 0.2: [{clo}, {chi}] drops");

    // a small normalized bar chart, written as standalone SVG
    let bars = vec![
        ("fb/none".to_string(), 10.0, 9.2, 10.6),
        ("fb/all".to_string(), 6.1, 5.4, 6.9),
        ("fb_m/all".to_string(), 8.3, 7.6, 9.0),
    ];
    let svg = render_bar_svg(&bars, Some(10.0));
    let path = std::env::temp_dir().join("example_summary.svg");
    std::fs::write(&path, &svg)?;
    println!("\nwrote a {}-byte bar chart to {}", svg.len(), path.display());
    Ok(())
}
