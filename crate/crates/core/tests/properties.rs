use proptest::prelude::*;

use spinphoto::codec::{decode, ThresholdMode};
use spinphoto::engine::spin_rotation;
use spinphoto::waveform::{
    bits_to_harmonics, harmonics_to_bits, synthesize, BitImage, Harmonic, HarmonicSet,
};

fn image() -> impl Strategy<Value = BitImage> {
    (1usize..9, 1usize..9).prop_flat_map(|(r, c)| {
        proptest::collection::vec(0u8..2, r * c).prop_map(move |bits| BitImage::new(r, c, bits).unwrap())
    })
}

/// Harmonics on a 7 Hz grid; `parity` picks even or odd grid points so two sets never collide.
fn harmonics(parity: i32) -> impl Strategy<Value = HarmonicSet> {
    proptest::collection::btree_map(-40i32..40, (0.0f64..5.0, -3.2f64..3.2), 1..6).prop_map(move |m| {
        HarmonicSet::new(
            m.into_iter()
                .map(|(k, (a, p))| Harmonic {
                    freq_hz: 7.0 * (2 * k + parity) as f64,
                    amp_hz: a,
                    phase_rad: p,
                })
                .collect(),
        )
        .unwrap()
    })
}

proptest! {
    #[test]
    fn pbm_round_trip(img in image()) {
        prop_assert_eq!(BitImage::from_pbm(&img.to_pbm()).unwrap(), img);
    }

    #[test]
    fn serde_round_trip(img in image()) {
        let text = serde_json::to_string(&img).unwrap();
        prop_assert_eq!(serde_json::from_str::<BitImage>(&text).unwrap(), img);
    }

    #[test]
    fn slot_program_round_trip(img in image(), spacing in 1.0f64..50.0, amp in 0.1f64..10.0) {
        let hs = bits_to_harmonics(&img, -100.0, spacing, amp).unwrap();
        prop_assert_eq!(hs.len(), img.len());
        prop_assert_eq!(harmonics_to_bits(&hs, img.rows(), img.cols()).unwrap(), img);
    }

    #[test]
    fn synthesis_is_linear(a in harmonics(0), b in harmonics(1), n in 600usize..1200) {
        let dur = 0.5;
        let wa = synthesize(&a, dur, n).unwrap();
        let wb = synthesize(&b, dur, n).unwrap();
        let wab = synthesize(&a.union(&b).unwrap(), dur, n).unwrap();
        for ((x, y), z) in wa.steps.iter().zip(&wb.steps).zip(&wab.steps) {
            prop_assert!((x.bx_hz + y.bx_hz - z.bx_hz).abs() < 1e-12 * (1.0 + z.bx_hz.abs()));
            prop_assert!((x.by_hz + y.by_hz - z.by_hz).abs() < 1e-12 * (1.0 + z.by_hz.abs()));
        }
    }

    #[test]
    fn decode_ignores_positive_scale(
        vals in proptest::collection::vec(-10.0f64..10.0, 4..30),
        k in 1e-6f64..1e6,
    ) {
        let table = vec![vals.clone()];
        let scaled = vec![vals.iter().map(|v| v * k).collect::<Vec<_>>()];
        match (decode(&table, ThresholdMode::Otsu), decode(&scaled, ThresholdMode::Otsu)) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.recovered, b.recovered);
                prop_assert!((a.margin - b.margin).abs() < 1e-9 * (1.0 + a.margin));
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "scale changed separability: {:?} vs {:?}", a.is_ok(), b.is_ok()),
        }
    }

    #[test]
    fn site_rotation_is_unitary(bx in -1e5f64..1e5, by in -1e5f64..1e5, dt in 1e-7f64..1e-3) {
        let r = spin_rotation(bx, by, dt);
        for i in 0..2 {
            for j in 0..2 {
                let dot = r[0][i].conj() * r[0][j] + r[1][i].conj() * r[1][j];
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot.re - want).abs() < 1e-13 && dot.im.abs() < 1e-13);
            }
        }
    }
}
