//! Adaptive Gauss–Kronrod quadrature and direct numerical evaluations of the
//! convolution integrals that define the GP kernels. Used as an independent
//! check on the closed forms; never called by the model itself.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (value, err) = gk15(f, a, b);
    if err <= tol || depth == 0 || (b - a).abs() < 1e-12 {
        return value;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, depth - 1) + adapt(f, m, b, 0.5 * tol, depth - 1)
}

/// Integrates `f` over `[a, b]`, splitting first at every breakpoint inside the interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let mut pts: Vec<f64> = std::iter::once(a)
        .chain(breaks.iter().copied().filter(|&x| x > a && x < b))
        .chain(std::iter::once(b))
        .collect();
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    let pieces = (pts.len() - 1).max(1) as f64;
    pts.windows(2).map(|w| adapt(&f, w[0], w[1], tol / pieces, 40)).sum()
}

fn smoothing(x: f64, eta: f64, xi: f64) -> f64 {
    eta / (2.0 * std::f64::consts::PI * xi * xi).sqrt() * (-x * x / (2.0 * xi * xi)).exp()
}

fn latent(r: f64, rp: f64, lambda: f64) -> f64 {
    (-(r - rp) * (r - rp) / (2.0 * lambda * lambda)).exp()
}

/// `∫ G(t - r) k_uu(r, w) dr`, truncated at ±8 standard deviations of the widest Gaussian.
pub fn k_fu_oracle(t: f64, w: f64, lambda: f64, eta: f64, xi: f64) -> f64 {
    let wide = lambda.max(xi);
    let a = t.min(w) - 8.0 * wide;
    let b = t.max(w) + 8.0 * wide;
    let s2 = lambda * lambda + xi * xi;
    let peak = (t * lambda * lambda + w * xi * xi) / s2;
    let sd = lambda * xi / s2.sqrt();
    let breaks = [t, w, peak - 8.0 * sd, peak, peak + 8.0 * sd];
    integrate(|r| smoothing(t - r, eta, xi) * latent(r, w, lambda), a, b, &breaks, 1e-13)
}

/// `∫∫ G_a(t - r) G_b(t' - r') k_uu(r, r') dr dr'` by nested adaptive quadrature.
pub fn k_ff_oracle(t: f64, t_prime: f64, lambda: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (eta_a, xi_a) = a;
    let (eta_b, xi_b) = b;
    let wide = lambda.max(xi_a).max(xi_b);
    let lo = t.min(t_prime) - 8.0 * wide;
    let hi = t.max(t_prime) + 8.0 * wide;
    let outer_breaks = [t - 8.0 * xi_a, t, t + 8.0 * xi_a, t_prime];
    integrate(
        |r| {
            let ga = smoothing(t - r, eta_a, xi_a);
            if ga == 0.0 {
                return 0.0;
            }
            let s2 = lambda * lambda + xi_b * xi_b;
            let peak = (t_prime * lambda * lambda + r * xi_b * xi_b) / s2;
            let sd = lambda * xi_b / s2.sqrt();
            let inner_breaks = [t_prime - 8.0 * xi_b, t_prime, t_prime + 8.0 * xi_b, peak - 8.0 * sd, peak, peak + 8.0 * sd];
            let inner = integrate(
                |rp| smoothing(t_prime - rp, eta_b, xi_b) * latent(r, rp, lambda),
                lo,
                hi,
                &inner_breaks,
                1e-12,
            );
            ga * inner
        },
        lo,
        hi,
        &outer_breaks,
        1e-10,
    )
}
