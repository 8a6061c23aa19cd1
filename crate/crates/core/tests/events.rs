use gazediff_core::events::{build_saliency, extract_fixations, min_window, Fixation, FixationParams, Scanpath};
use proptest::prelude::*;

/// Window-scan reference: dispersion recomputed from scratch for every window.
fn idt_reference(points: &[[f64; 2]], rate: f64, params: &FixationParams) -> Vec<(usize, usize)> {
    let dispersion = |w: &[[f64; 2]]| {
        let xs = w.iter().map(|p| p[0]);
        let ys = w.iter().map(|p| p[1]);
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = it.collect();
            v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
        };
        span(&mut xs.clone()) + span(&mut ys.clone())
    };
    let need = min_window(rate, params.min_duration_s);
    let mut out = Vec::new();
    let mut i = 0;
    while i + need <= points.len() {
        if dispersion(&points[i..i + need]) <= params.dispersion_px {
            let mut end = i + need;
            while end < points.len() && dispersion(&points[i..=end]) <= params.dispersion_px {
                end += 1;
            }
            out.push((i, end));
            i = end;
        } else {
            i += 1;
        }
    }
    out
}

fn spans(fixations: &[Fixation], rate: f64) -> Vec<(usize, usize)> {
    fixations
        .iter()
        .map(|f| {
            let s = (f.onset * rate).round() as usize;
            (s, s + (f.duration * rate).round() as usize)
        })
        .collect()
}

#[test]
fn two_dwells_split_by_a_jump() {
    let rate = 240.0;
    let mut pts = vec![[50.0, 50.0]; 120];
    pts.push([110.0, 80.0]);
    pts.extend(vec![[170.0, 120.0]; 120]);
    let params = FixationParams::default();
    let f = extract_fixations(&pts, rate, &params).unwrap();
    assert_eq!(f.len(), 2);
    assert_eq!(spans(&f, rate), idt_reference(&pts, rate, &params));
    assert_eq!((f[0].x, f[0].y), (50.0, 50.0));
    assert_eq!((f[1].x, f[1].y), (170.0, 120.0));
    assert!((f[0].duration - 0.5).abs() < 1e-12);
}

fn dwell_trajectory() -> impl Strategy<Value = Vec<[f64; 2]>> {
    // Dwells of random length and position with small jitter.
    prop::collection::vec(
        (
            10usize..80,
            prop::array::uniform2(0.0f64..224.0),
            prop::collection::vec(prop::array::uniform2(-6.0f64..6.0), 80),
        ),
        1..6,
    )
    .prop_map(|dwells| {
        dwells
            .into_iter()
            .flat_map(|(n, c, jitter)| {
                jitter
                    .into_iter()
                    .take(n)
                    .map(move |j| [(c[0] + j[0]).clamp(0.0, 223.0), (c[1] + j[1]).clamp(0.0, 223.0)])
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn matches_window_scan_reference(pts in dwell_trajectory()) {
        let params = FixationParams::default();
        let f = extract_fixations(&pts, 100.0, &params).unwrap();
        prop_assert_eq!(spans(&f, 100.0), idt_reference(&pts, 100.0, &params));
    }

    #[test]
    fn fixation_count_survives_integer_upsampling(pts in dwell_trajectory(), k in 2usize..4) {
        let params = FixationParams::default();
        let base = extract_fixations(&pts, 100.0, &params).unwrap();
        let up: Vec<[f64; 2]> = pts.iter().flat_map(|&p| std::iter::repeat_n(p, k)).collect();
        let fine = extract_fixations(&up, 100.0 * k as f64, &params).unwrap();
        prop_assert_eq!(base.len(), fine.len());
        for (a, b) in base.iter().zip(&fine) {
            prop_assert!((a.duration - b.duration).abs() < 1e-9);
            prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
    }

    #[test]
    fn fixations_fit_inside_the_recording(pts in dwell_trajectory()) {
        let f = extract_fixations(&pts, 100.0, &FixationParams::default()).unwrap();
        let total: f64 = f.iter().map(|f| f.duration).sum();
        prop_assert!(total <= pts.len() as f64 / 100.0 + 1e-9);
        for w in f.windows(2) {
            prop_assert!(w[1].onset > w[0].onset);
        }
        for x in &f {
            prop_assert!(x.duration >= 0.1 - 1e-9);
            prop_assert!((0.0..=223.0).contains(&x.x) && (0.0..=223.0).contains(&x.y));
        }
    }

    #[test]
    fn saliency_sums_to_one_and_ignores_order(
        pts in prop::collection::vec(prop::array::uniform2(0.0f64..48.0), 1..12),
        sigma in 0.5f64..6.0,
    ) {
        let fixations: Vec<Fixation> = pts
            .iter()
            .map(|p| Fixation { x: p[0], y: p[1], onset: 0.0, duration: 0.1 })
            .collect();
        let forward = Scanpath { stimulus_id: "s".into(), fixations: fixations.clone() };
        let mut reversed = forward.clone();
        reversed.fixations.reverse();
        let a = build_saliency(&[forward], (48, 48), sigma).unwrap();
        let b = build_saliency(&[reversed], (48, 48), sigma).unwrap();
        prop_assert!((a.sum() - 1.0).abs() < 1e-9);
        prop_assert!(a.values.iter().all(|&v| v >= 0.0));
        prop_assert_eq!(a, b);
    }
}

#[test]
fn two_equal_fixations_give_equal_peaks() {
    let f = |x: f64| Fixation {
        x,
        y: 20.0,
        onset: 0.0,
        duration: 0.2,
    };
    let s = Scanpath {
        stimulus_id: "s".into(),
        fixations: vec![f(10.0), f(30.0)],
    };
    let m = build_saliency(&[s], (41, 41), 3.0).unwrap();
    assert!((m.at(20, 10) - m.at(20, 30)).abs() < 1e-15);
}
