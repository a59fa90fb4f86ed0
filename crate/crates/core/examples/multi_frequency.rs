//! Ten simultaneous weak harmonics spread over the cluster's band. Each
//! programmed frequency shows up as its own line; the unprogrammed slots in
//! between stay quiet.
//!
//!     cargo run --release --example multi_frequency -- [seed] [spacing_hz]

use spinphoto::engine::{Engine, Mode};
use spinphoto::experiments::{detect, AcquisitionParams};
use spinphoto::ops::SpinSystem;
use spinphoto::waveform::{synthesize, Harmonic, HarmonicSet};

fn main() -> spinphoto::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(1, |s| s.parse().expect("seed"));
    let spacing: f64 = args.next().map_or(200.0, |s| s.parse().expect("spacing"));
    let amp: f64 = args.next().map_or(12.0, |s| s.parse().expect("amp"));
    let dur: f64 = args.next().map_or(0.2, |s| s.parse().expect("dur"));
    let phase_seed: Option<u64> = args.next().map(|s| s.parse().expect("phase seed"));
    let eng = Engine::new(&SpinSystem::random(8, 792.0, seed)?)?;
    // 20 slots centred on the carrier, every other one programmed
    let slots: Vec<f64> = (0..20).map(|k| spacing * (k as f64 - 9.5)).collect();
    let hs = HarmonicSet::new(
        slots
            .iter()
            .step_by(2)
            .map(|&f| Harmonic { freq_hz: f, amp_hz: amp, phase_rad: 0.0 })
            .collect(),
    )?;
    let hs = match phase_seed {
        Some(p) => hs.with_random_phases(p),
        None => hs,
    };
    let steps = (2.0 * dur * hs.max_abs_freq()).ceil().max(10240.0 * dur) as usize;
    let wf = synthesize(&hs, dur, steps)?;
    let mut st = eng.thermal();
    eng.evolve(&mut st, &wf, Mode::Split)?;
    let spec = detect(&eng, &st, &AcquisitionParams::default(), dur)?;
    for (k, &f) in slots.iter().enumerate() {
        let a = spec.referenced_integral(f, spacing / 4.0)?;
        let tag = if k % 2 == 0 { "programmed" } else { "" };
        println!("{f:>8.1} Hz  |a| = {:.3e}  re = {:+.3e}  {tag}", a.norm(), a.re);
    }
    Ok(())
}
