use crate::error::{PifmError, Result};

/// Times in `[0, 1]` are stretched by this factor before the sinusoids so the
/// highest frequency completes about one and a half periods over the unit
/// interval while staying smooth enough for quadrature in `t`.
pub const TIME_SCALE: f64 = 10.0;
const MAX_PERIOD: f64 = 10_000.0;

/// Sinusoidal encoding of `t`: `[sin(s t f_k)..., cos(s t f_k)...]` with
/// `f_k = MAX_PERIOD^(-k / half)`.
pub fn time_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(PifmError::Config(format!(
            "time embedding dimension must be positive and even, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(MAX_PERIOD.ln()) * k as f64 / half as f64).exp();
        let arg = TIME_SCALE * t * freq;
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time() {
        let e = time_embedding(0.0, 16).unwrap();
        assert!(e[..8].iter().all(|&x| x == 0.0));
        assert!(e[8..].iter().all(|&x| x == 1.0));
    }

    #[test]
    fn deterministic_and_lipschitz() {
        assert_eq!(time_embedding(0.37, 32).unwrap(), time_embedding(0.37, 32).unwrap());
        let a = time_embedding(0.5, 32).unwrap();
        let b = time_embedding(0.5 + 1e-9, 32).unwrap();
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-6, "{diff}");
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(matches!(time_embedding(0.1, 7), Err(PifmError::Config(_))));
        assert!(time_embedding(0.1, 0).is_err());
    }
}
