/// Linear warm-up: `base · min(1, (step + 1) / warmup)`.
pub fn warmup_lr(step: u64, warmup: u64, base: f64) -> f64 {
    let warmup = warmup.max(1);
    base * ((step + 1) as f64 / warmup as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_and_plateau() {
        assert!((warmup_lr(0, 500, 1e-3) - 2e-6).abs() < 1e-18);
        assert_eq!(warmup_lr(499, 500, 1e-3), 1e-3);
        assert_eq!(warmup_lr(10_000, 500, 1e-3), 1e-3);
    }

    #[test]
    fn non_decreasing() {
        let lrs: Vec<f64> = (0..700).map(|t| warmup_lr(t, 500, 1e-3)).collect();
        assert!(lrs.windows(2).all(|w| w[0] <= w[1]));
    }
}
