//! Full photography round trip with the desk-4x4 preset: store a 4×4 image
//! with one pulse, read it back row by row, decode and compare.
//!
//!     cargo run --release --example photograph_4x4 -- [image.pbm]

use spinphoto::cli::{demo_image_4x4, desk_4x4_photography};
use spinphoto::codec::{decode, sample_slots, ThresholdMode};
use spinphoto::experiments::run_photography;
use spinphoto::waveform::BitImage;

fn main() -> spinphoto::Result<()> {
    let img = match std::env::args().nth(1) {
        Some(p) => BitImage::load_pbm(p)?,
        None => demo_image_4x4(),
    };
    let cfg = desk_4x4_photography();
    let stack = run_photography(&img, &cfg)?;
    let table = sample_slots(&stack, cfg.f_start(img.rows(), img.cols()), cfg.spacing_hz, img.rows(), img.cols())?;
    let rep = decode(&table, ThresholdMode::Otsu)?.with_reference(&img)?;
    println!("slot amplitudes:");
    for row in &table {
        let cells: Vec<String> = row.iter().map(|a| format!("{a:+.3e}")).collect();
        println!("  {}", cells.join("  "));
    }
    println!("input      recovered");
    for (a, b) in img.row_strings().iter().zip(rep.recovered.row_strings()) {
        println!("  {a}     {b}");
    }
    println!(
        "bit errors {}  margin {:.3}  threshold {:.3e}",
        rep.bit_errors.unwrap_or(0),
        rep.margin,
        rep.threshold
    );
    Ok(())
}
