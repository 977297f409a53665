/// Base of the geometric frequency ladder.
pub const SINUSOID_BASE: f64 = 10_000.0;

/// Interleaved `[sin(v w_0), cos(v w_0), sin(v w_1), cos(v w_1), ..]` with
/// `w_i = BASE^(-i / (dim / 2))`. `dim` must be even.
pub fn sinusoidal(value: f64, dim: usize) -> Vec<f64> {
    assert!(dim % 2 == 0, "sinusoidal embedding width must be even, got {dim}");
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = SINUSOID_BASE.powf(-(i as f64) / half as f64);
        let (s, c) = (value * freq).sin_cos();
        out.push(s);
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_alternating() {
        let e = sinusoidal(0.0, 8);
        assert_eq!(e, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn diffusion_steps_do_not_collide() {
        let embs: Vec<Vec<f64>> = (1..=1024).map(|t| sinusoidal(t as f64, 16)).collect();
        for i in 0..embs.len() {
            for j in (i + 1)..embs.len() {
                let d: f64 = embs[i].iter().zip(&embs[j]).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d > 1e-6, "steps {} and {} collide", i + 1, j + 1);
            }
        }
    }

    #[test]
    #[should_panic]
    fn odd_width_panics() {
        sinusoidal(1.0, 3);
    }
}
