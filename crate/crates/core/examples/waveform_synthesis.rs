//! Programs a 32×32 image into a 1024-harmonic pulse and prints a few
//! properties of the sampled waveform. Nothing is simulated.
//!
//!     cargo run --release --example waveform_synthesis

use spinphoto::cli::{demo_image, SynthConfig};
use spinphoto::waveform::{harmonics_to_bits, row_harmonics, synthesize};

fn main() -> spinphoto::Result<()> {
    let cfg = SynthConfig::paper_echo();
    let img = demo_image(cfg.rows, cfg.cols)?;
    let hs = cfg.harmonics(&img)?;
    let wf = synthesize(&hs, cfg.duration_s, cfg.n_steps)?;
    let h = hs.harmonics();
    println!("{} set bits of {}", img.count_ones(), img.len());
    println!("slots {:.1} .. {:.1} Hz", h[0].freq_hz, h[h.len() - 1].freq_hz);
    println!("{} steps, dt = {:.3} µs", wf.n_steps, wf.dt() * 1e6);
    println!("peak field {:.1} Hz, mean power {:.2} Hz²", wf.max_field(), wf.mean_power());
    println!("Σa² = {:.2} Hz²", h.iter().map(|x| x.amp_hz * x.amp_hz).sum::<f64>());
    let phased = synthesize(&hs.with_random_phases(7), cfg.duration_s, cfg.n_steps)?;
    println!("peak field with random phases {:.1} Hz", phased.max_field());
    assert_eq!(harmonics_to_bits(&hs, cfg.rows, cfg.cols)?, img);

    let f0 = h[0].freq_hz;
    let comb = row_harmonics(3, f0, cfg.spacing_hz, cfg.cols, cfg.rows, 9.0)?;
    let teeth = comb.harmonics();
    println!(
        "row 3 comb: {} teeth from {:.1} Hz every {:.1} Hz",
        teeth.len(),
        teeth[0].freq_hz,
        teeth[1].freq_hz - teeth[0].freq_hz
    );
    Ok(())
}
