//! Simulator and preprocessing checked against brute-force oracles.

use streamtune::fan_sim::{SignalParams, WINDOW_LEN};
use streamtune::{fit_preproc, FanMode, FanStream, Rng, StreamWindow};

fn windows(params: SignalParams, mode: FanMode, seed: u64, n: usize) -> Vec<StreamWindow> {
    FanStream::new(params, mode, Rng::new(seed), None).take(n).collect()
}

fn covariance(corpus: &[StreamWindow]) -> [[f64; 3]; 3] {
    let n = (corpus.len() * WINDOW_LEN) as f64;
    let mut mean = [0.0; 3];
    for s in corpus.iter().flat_map(|w| w.samples.iter()) {
        (0..3).for_each(|a| mean[a] += f64::from(s[a]) / n);
    }
    let mut c = [[0.0; 3]; 3];
    for s in corpus.iter().flat_map(|w| w.samples.iter()) {
        let d = [0, 1, 2].map(|a| f64::from(s[a]) - mean[a]);
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] += d[i] * d[j] / n;
            }
        }
    }
    c
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(v: [f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// Largest root of det(C - λI) via the trigonometric cubic solution, then the
// null vector of C - λI as the widest cross product of two of its rows.
fn closed_form_top_eigenvector(c: &[[f64; 3]; 3]) -> [f64; 3] {
    let q = (c[0][0] + c[1][1] + c[2][2]) / 3.0;
    let off = c[0][1].powi(2) + c[0][2].powi(2) + c[1][2].powi(2);
    let p = (((c[0][0] - q).powi(2) + (c[1][1] - q).powi(2) + (c[2][2] - q).powi(2) + 2.0 * off) / 6.0).sqrt();
    let b: Vec<[f64; 3]> = (0..3)
        .map(|i| [0, 1, 2].map(|j| (c[i][j] - if i == j { q } else { 0.0 }) / p))
        .collect();
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let phi = (det_b / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let lambda = q + 2.0 * p * phi.cos();

    let rows: Vec<[f64; 3]> = (0..3)
        .map(|i| [0, 1, 2].map(|j| c[i][j] - if i == j { lambda } else { 0.0 }))
        .collect();
    let v = [cross(rows[0], rows[1]), cross(rows[0], rows[2]), cross(rows[1], rows[2])]
        .into_iter()
        .max_by(|a, b| norm(*a).total_cmp(&norm(*b)))
        .unwrap();
    let n = norm(v);
    let mut v = v.map(|x| x / n);
    let largest = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
    if largest < 0.0 {
        v = v.map(|x| -x);
    }
    v
}

#[test]
fn pca_axis_matches_closed_form_eigenvector() {
    let mut corpora = vec![
        windows(SignalParams::default(), FanMode::Normal, 0, 500),
        windows(SignalParams::default(), FanMode::Tilted, 1, 500),
    ];
    let drifted = streamtune::DriftConfig::default();
    corpora.push(
        FanStream::new(SignalParams::default(), FanMode::Normal, Rng::new(2), Some(drifted))
            .take(500)
            .collect(),
    );
    for corpus in &corpora {
        let fitted = fit_preproc(corpus).unwrap().pca_axis();
        let oracle = closed_form_top_eigenvector(&covariance(corpus));
        for a in 0..3 {
            assert!((f64::from(fitted[a]) - oracle[a]).abs() < 1e-6, "{fitted:?} vs {oracle:?}");
        }
    }
}

#[test]
fn projection_variance_dominates_perpendicular_directions() {
    let corpus = windows(SignalParams::default(), FanMode::Normal, 5, 300);
    let c = covariance(&corpus);
    let axis = fit_preproc(&corpus).unwrap().pca_axis().map(f64::from);
    let var = |v: [f64; 3]| -> f64 {
        (0..3).map(|i| (0..3).map(|j| v[i] * c[i][j] * v[j]).sum::<f64>()).sum()
    };
    let along = var(axis);
    let mut rng = Rng::new(11);
    for _ in 0..1000 {
        let r = [0; 3].map(|_| rng.normal(0.0, 1.0));
        let perp = cross(axis, r);
        let perp = perp.map(|x| x / norm(perp));
        assert!(along >= var(perp), "{along} < {}", var(perp));
    }
}

fn dft_magnitudes(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = std::f64::consts::TAU * (k * t) as f64 / n as f64;
                re += v * a.cos();
                im -= v * a.sin();
            }
            re.hypot(im)
        })
        .collect()
}

fn mean_spectrum(corpus: &[StreamWindow], axis: usize) -> Vec<f64> {
    let mut acc = vec![0.0; WINDOW_LEN / 2 + 1];
    for w in corpus {
        let x: Vec<f64> = w.axis(axis).map(f64::from).collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
        for (a, m) in acc.iter_mut().zip(dft_magnitudes(&centered)) {
            *a += m / corpus.len() as f64;
        }
    }
    acc
}

#[test]
fn noise_free_normal_peaks_at_the_fundamental() {
    let params = SignalParams::noise_free();
    let nearest = (params.fundamental_hz * WINDOW_LEN as f64 / params.sample_rate_hz).round() as usize;
    for w in windows(params.clone(), FanMode::Normal, 0, 10) {
        let x: Vec<f64> = w.axis(0).map(f64::from).collect();
        let mags = dft_magnitudes(&x);
        let peak = (0..mags.len()).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap();
        assert_eq!(peak, nearest);
    }
}

#[test]
fn stuck_has_no_spectral_line() {
    let stuck = windows(SignalParams::default(), FanMode::Stuck, 3, 200);
    let normal = windows(SignalParams::default(), FanMode::Normal, 3, 200);
    for axis in 0..3 {
        let spectrum = mean_spectrum(&stuck, axis);
        let floor = spectrum[1..].iter().sum::<f64>() / (spectrum.len() - 1) as f64;
        assert!(spectrum[1..].iter().all(|&m| m < 3.0 * floor), "axis {axis}: {spectrum:?}");
    }
    let spectrum = mean_spectrum(&normal, 0);
    let floor = spectrum[1..].iter().sum::<f64>() / (spectrum.len() - 1) as f64;
    assert!(spectrum[1..].iter().any(|&m| m >= 3.0 * floor));
}

// Per-axis mean and RMS deviation: phase-invariant, so a single centroid per
// mode is meaningful even though windows start at different phases.
fn summary(w: &StreamWindow) -> [f64; 6] {
    let mut out = [0.0; 6];
    for a in 0..3 {
        let x: Vec<f64> = w.axis(a).map(f64::from).collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        out[a] = mean;
        out[3 + a] = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    }
    out
}

#[test]
fn nearest_centroid_separates_noise_free_modes() {
    let params = SignalParams::noise_free();
    let train: Vec<Vec<[f64; 6]>> = FanMode::ALL
        .iter()
        .map(|&m| windows(params.clone(), m, 0, 50).iter().map(summary).collect())
        .collect();
    let centroids: Vec<[f64; 6]> = train
        .iter()
        .map(|rows| {
            let mut c = [0.0; 6];
            for r in rows {
                (0..6).for_each(|i| c[i] += r[i] / rows.len() as f64);
            }
            c
        })
        .collect();
    for mode in FanMode::ALL {
        for w in FanStream::new(params.clone(), mode, Rng::new(1), None).starting_at(1000).take(50) {
            let s = summary(&w);
            let dist = |c: &[f64; 6]| (0..6).map(|i| (s[i] - c[i]).powi(2)).sum::<f64>();
            let nearest = (0..3).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
            assert_eq!(nearest, mode.index());
        }
    }
}
