//! Two uncoupled 2-spin pairs: the 4-spin signal is the sum of the pair
//! signals, because the density matrix stays a product.
//!
//!     cargo run --release --example composability

use spinphoto::engine::{acquire, evolve, Mode};
use spinphoto::ops::{thermal_state, SpinSystem};
use spinphoto::waveform::{synthesize, HarmonicSet};

fn main() -> spinphoto::Result<()> {
    let a = SpinSystem::new(vec![vec![0.0, 310.0], vec![310.0, 0.0]])?.with_offsets(vec![40.0, -25.0])?;
    let b = SpinSystem::new(vec![vec![0.0, -540.0], vec![-540.0, 0.0]])?.with_offsets(vec![-80.0, 65.0])?;
    let mut j = vec![vec![0.0; 4]; 4];
    j[0][1] = 310.0;
    j[1][0] = 310.0;
    j[2][3] = -540.0;
    j[3][2] = -540.0;
    let whole = SpinSystem::new(j)?.with_offsets(vec![40.0, -25.0, -80.0, 65.0])?;

    let wf = synthesize(&HarmonicSet::single(30.0, 15.0)?, 0.05, 512)?;
    let run = |sys: &SpinSystem| -> spinphoto::Result<_> {
        let st = evolve(&thermal_state(sys)?, sys, &wf, Mode::Exact)?;
        acquire(&st, sys, 0.25, 1.0 / 4096.0)
    };
    let (fa, fb, fw) = (run(&a)?, run(&b)?, run(&whole)?);
    let sum = fa.combine(1.0, &fb, 1.0)?;
    println!("relative L2 difference: {:.3e}", fw.relative_l2(&sum)?);
    Ok(())
}
