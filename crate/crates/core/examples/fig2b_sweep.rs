//! Second-pulse duration sweep: the signed amplitude of the line stored by
//! pulse 1 as the locking pulse gets longer.
//!
//!     cargo run --release --example fig2b_sweep -- [seed]

use spinphoto::experiments::{run_fig2b, Fig2bConfig};

fn main() -> spinphoto::Result<()> {
    let seed = std::env::args().nth(1).map_or(1, |s| s.parse().expect("seed"));
    let cfg = Fig2bConfig { seed, ..Fig2bConfig::default() };
    let res = run_fig2b(&cfg)?;
    let peak = res.points.iter().fold(0.0f64, |m, p| m.max(p.signed_amplitude.abs()));
    for p in &res.points {
        let bar = (20.0 * p.signed_amplitude / peak).round() as i64;
        let line = if bar >= 0 {
            format!("{:>20}|{}", "", "#".repeat(bar as usize))
        } else {
            format!("{:>20}|", "#".repeat((-bar) as usize))
        };
        println!("{:.2} s {:+.3e} {line}", p.duration_s, p.signed_amplitude);
    }
    println!("sign flips: {}  amplification: {:.2}", res.sign_flips(), res.amplification());
    Ok(())
}
