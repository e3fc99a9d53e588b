/// Linear variance schedule for the diffusion process.
///
/// Step indices are 1-based: beta(1) = beta_start, beta(gamma) = beta_end,
/// interpolated linearly. alpha = 1 - beta; alpha_bar is the running product.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(gamma: usize, beta_start: f64, beta_end: f64) -> Self {
        assert!(gamma >= 1, "contract violation: schedule needs at least 1 step");
        assert!(
            beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
            "contract violation: schedule requires 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        );
        let mut betas = Vec::with_capacity(gamma);
        for i in 0..gamma {
            let frac = if gamma == 1 { 0.0 } else { i as f64 / (gamma - 1) as f64 };
            betas.push(beta_start + (beta_end - beta_start) * frac);
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(gamma);
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Self { betas, alphas, alpha_bars }
    }

    pub fn gamma(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, delta: usize) {
        assert!(
            (1..=self.gamma()).contains(&delta),
            "contract violation: step {delta} outside 1..={}",
            self.gamma()
        );
    }

    pub fn beta(&self, delta: usize) -> f64 {
        self.check(delta);
        self.betas[delta - 1]
    }

    pub fn alpha(&self, delta: usize) -> f64 {
        self.check(delta);
        self.alphas[delta - 1]
    }

    pub fn alpha_bar(&self, delta: usize) -> f64 {
        self.check(delta);
        self.alpha_bars[delta - 1]
    }
}
