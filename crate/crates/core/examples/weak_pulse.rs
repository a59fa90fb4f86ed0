//! A 1 s single-frequency weak pulse placed on the strongest hard-pulse line.
//! The coherence it leaves behind comes out with the opposite phase.
//!
//!     cargo run --release --example weak_pulse -- [seed] [amp_hz]

use spinphoto::engine::{Engine, Mode};
use spinphoto::experiments::{detect, AcquisitionParams};
use spinphoto::ops::SpinSystem;
use spinphoto::waveform::{synthesize, HarmonicSet, Waveform};

fn main() -> spinphoto::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(1, |s| s.parse().expect("seed"));
    let amp: f64 = args.next().map_or(2.1, |s| s.parse().expect("amplitude"));
    let eng = Engine::new(&SpinSystem::random(8, 792.0, seed)?)?;
    let acq = AcquisitionParams::default();

    let hard = Waveform::constant(2.5e-6, 4, 100_000.0, 0.0)?;
    let mut st = eng.thermal();
    eng.evolve(&mut st, &hard, Mode::Exact)?;
    let hard_spec = detect(&eng, &st, &acq, hard.duration_s)?;
    // strongest line inside ±500 Hz
    let (f, _) = hard_spec
        .freqs_hz
        .iter()
        .zip(&hard_spec.values)
        .filter(|(f, _)| f.abs() < 500.0)
        .max_by(|a, b| a.1.re.total_cmp(&b.1.re))
        .map(|(f, v)| (*f, *v))
        .expect("non-empty axis");

    let weak = synthesize(&HarmonicSet::single(f, amp)?, 1.0, 10240)?;
    let mut st = eng.thermal();
    eng.evolve(&mut st, &weak, Mode::Exact)?;
    let weak_spec = detect(&eng, &st, &acq, weak.duration_s)?;

    let h = hard_spec.referenced_value(f)?.re;
    let w = weak_spec.referenced_value(f)?.re;
    println!("line at {f:.2} Hz");
    println!("  hard 90°       : {h:+.4e}");
    println!("  weak {amp} Hz, 1 s: {w:+.4e}");
    println!("  opposite phase : {}", h * w < 0.0);
    Ok(())
}
