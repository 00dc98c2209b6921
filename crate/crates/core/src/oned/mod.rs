//! Exact 1-D machinery for `-w'' = 1 / (c (n-1) w^n)`, `w(0) = 1`, `w'(0) = 0`.
//!
//! Integrating once turns the Cauchy problem into the implicit relation
//! `S_n(1 - w^{n-1}(t)) = sqrt(2/c) t` with
//! `S_n(x) = int_0^x h^{-1/2} (1-h)^{-(n-3)/(2(n-1))} dh`. Everything here is
//! built on accurate evaluation and inversion of `S_n`, plus the Gamma-function
//! closed forms for `S_n(1)`, the first zero `T_n` and the amplitude `alpha_n`.
//!
//! Powers such as `w^{n+1}` are formed in log-domain; `1 - x` is carried
//! separately from `x` so that `w` near its zero keeps full relative accuracy.

mod gamma;
mod quadrature;

pub use gamma::{gamma_fn, ln_gamma};
pub use quadrature::adaptive_simpson;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance of every `S_n` quadrature.
pub const QUAD_TOL: f64 = 1e-14;
/// Largest `n` used for profile evaluation in double precision.
pub const MAX_PROFILE_N: f64 = 400.0;

fn check_n(n: f64) -> Result<()> {
    if !(n >= 3.0) || !n.is_finite() {
        return Err(Error::DomainError(format!("n must be at least 3, got {n}")));
    }
    Ok(())
}

/// `S_n` with its endpoint singularities removed by substitution.
///
/// On `[0, 1/2]` we integrate in `s = sqrt(h)`; on `[1/2, 1]` in `tau` with
/// `1 - h = tau^k`, `k = 2(n-1)/(n+1)`. Both substituted integrands are bounded.
#[derive(Debug, Clone)]
pub struct SIntegral {
    n: f64,
    exponent: f64,
    k: f64,
    half: f64,
    tail_half: f64,
}

impl SIntegral {
    pub fn new(n: f64) -> Result<Self> {
        check_n(n)?;
        let exponent = (n - 3.0) / (2.0 * (n - 1.0));
        let k = 2.0 * (n - 1.0) / (n + 1.0);
        let mut s = Self {
            n,
            exponent,
            k,
            half: 0.0,
            tail_half: 0.0,
        };
        s.half = s.head_in_s(0.5_f64.sqrt())?;
        s.tail_half = s.tail_in_tau(0.5_f64.powf(1.0 / k))?;
        Ok(s)
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    /// `int_0^{s^2}` in the `s` variable.
    fn head_in_s(&self, s: f64) -> Result<f64> {
        let a = self.exponent;
        adaptive_simpson(|r| 2.0 * (1.0 - r * r).powf(-a), 0.0, s, QUAD_TOL)
    }

    /// `int_{1 - tau^k}^1` in the `tau` variable.
    fn tail_in_tau(&self, tau: f64) -> Result<f64> {
        let k = self.k;
        adaptive_simpson(|r| k / (1.0 - r.powf(k)).sqrt(), 0.0, tau, QUAD_TOL)
    }

    /// `S_n(1)` by quadrature.
    pub fn total(&self) -> f64 {
        self.half + self.tail_half
    }

    /// `S_n(x)` for `x` in `[0, 1]`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::DomainError(format!(
                "S_n needs x in [0, 1], got {x}"
            )));
        }
        if x <= 0.5 {
            self.head_in_s(x.sqrt())
        } else {
            self.eval_complement(1.0 - x)
        }
    }

    /// `S_n(1 - xi)`, accurate when `xi` is small.
    pub fn eval_complement(&self, xi: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&xi) {
            return Err(Error::DomainError(format!(
                "complement must be in [0, 1], got {xi}"
            )));
        }
        if xi >= 0.5 {
            return self.head_in_s((1.0 - xi).sqrt());
        }
        Ok(self.total() - self.tail_in_tau(xi.powf(1.0 / self.k))?)
    }

    /// Solves `S_n(x) = y`, returning `(x, 1 - x)`.
    pub fn invert_split(&self, y: f64) -> Result<(f64, f64)> {
        let total = self.total();
        let slack = 1e-13 * total;
        if !(y >= -slack && y <= total + slack) {
            return Err(Error::DomainError(format!(
                "S_n^-1 needs y in [0, {total}], got {y}"
            )));
        }
        let y = y.clamp(0.0, total);
        if y == 0.0 {
            return Ok((0.0, 1.0));
        }
        if y == total {
            return Ok((1.0, 0.0));
        }
        if y <= self.half {
            let a = self.exponent;
            let s = newton_bracketed(
                |s| self.head_in_s(s).map(|v| v - y),
                |s| 2.0 * (1.0 - s * s).powf(-a),
                0.0,
                0.5_f64.sqrt(),
                0.5 * y,
            )?;
            let x = s * s;
            Ok((x, 1.0 - x))
        } else {
            let target = total - y;
            let k = self.k;
            let tau = newton_bracketed(
                |t| self.tail_in_tau(t).map(|v| v - target),
                |t| k / (1.0 - t.powf(k)).sqrt(),
                0.0,
                0.5_f64.powf(1.0 / k),
                target / k,
            )?;
            let xi = tau.powf(k);
            Ok((1.0 - xi, xi))
        }
    }

    pub fn invert(&self, y: f64) -> Result<f64> {
        self.invert_split(y).map(|p| p.0)
    }
}

/// Newton iteration on an increasing function, kept inside `[lo, hi]` by bisection.
fn newton_bracketed(
    f: impl Fn(f64) -> Result<f64>,
    df: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    guess: f64,
) -> Result<f64> {
    let mut x = guess.clamp(lo, hi);
    for _ in 0..200 {
        let fx = f(x)?;
        if fx == 0.0 {
            return Ok(x);
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let mut next = x - fx / df(x);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            return Ok(next);
        }
        if hi - lo <= 2.0 * f64::EPSILON * hi.abs() {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// `S_n(x)`.
pub fn s_n_integral(x: f64, n: f64) -> Result<f64> {
    SIntegral::new(n)?.eval(x)
}

/// `S_n^{-1}(y)`.
pub fn s_n_inverse(y: f64, n: f64) -> Result<f64> {
    SIntegral::new(n)?.invert(y)
}

/// `Gamma(1/2 + 1/(n-1))` and `Gamma(n/(n-1))`.
fn gamma_pair(n: f64) -> Result<(f64, f64)> {
    check_n(n)?;
    let e = 1.0 / (n - 1.0);
    Ok((gamma_fn(0.5 + e)?, gamma_fn(1.0 + e)?))
}

/// Closed form `S_n(1) = sqrt(pi) Gamma(1/2 + 1/(n-1)) / Gamma(n/(n-1))`.
pub fn s_n_total_closed_form(n: f64) -> Result<f64> {
    let (gh, gn) = gamma_pair(n)?;
    Ok(PI.sqrt() * gh / gn)
}

/// Lower end of the admissible range for `c`: the value with first zero at 1.
pub fn c_lower(n: f64) -> Result<f64> {
    let (gh, gn) = gamma_pair(n)?;
    Ok(2.0 * gn * gn / (PI * gh * gh))
}

/// Upper bound for `c_n`, which forces the first zero to be at most 2.
pub fn c_upper(n: f64) -> Result<f64> {
    let (gh, gn) = gamma_pair(n)?;
    Ok(8.0 * gn * gn / (PI * gh * gh))
}

/// Amplitude `alpha_n` that puts the first zero of `u = alpha w` at `R`.
pub fn alpha_n(r: f64, n: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::DomainError(format!("R must be positive, got {r}")));
    }
    let (gh, gn) = gamma_pair(n)?;
    let base = 2.0 * r * r * (n - 1.0) * gn * gn / (PI * gh * gh);
    Ok((base.ln() / (n + 1.0)).exp())
}

/// First zero `T_n` of `w` when `alpha^{n+1} = c (n-1)`.
pub fn t_n_of_c(c: f64, n: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::DomainError(format!("c must be positive, got {c}")));
    }
    let (gh, gn) = gamma_pair(n)?;
    Ok((PI * c / 2.0).sqrt() * gh / gn)
}

/// The normalised shooting solution `w` for given `(n, c)`.
#[derive(Debug, Clone)]
pub struct OneDProfile {
    n: f64,
    c: f64,
    first_zero: f64,
    s: SIntegral,
}

impl OneDProfile {
    /// Fails for `n > MAX_PROFILE_N`, where `w^{n+1}` near the zero is no
    /// longer resolvable in double precision.
    pub fn new(n: f64, c: f64) -> Result<Self> {
        if n > MAX_PROFILE_N {
            return Err(Error::DomainError(format!(
                "profile evaluation is capped at n = {MAX_PROFILE_N}, got {n}"
            )));
        }
        let first_zero = t_n_of_c(c, n)?;
        Ok(Self {
            n,
            c,
            first_zero,
            s: SIntegral::new(n)?,
        })
    }

    /// The profile whose first zero sits at `R`, i.e. `c = alpha_n(R)^{n+1} / (n-1)`.
    pub fn with_first_zero(r: f64, n: f64) -> Result<Self> {
        let c = r * r * c_lower(n)?;
        Self::new(n, c)
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `alpha = (c (n-1))^{1/(n+1)}`.
    pub fn alpha(&self) -> f64 {
        ((self.c * (self.n - 1.0)).ln() / (self.n + 1.0)).exp()
    }

    pub fn first_zero(&self) -> f64 {
        self.first_zero
    }

    pub fn s_integral(&self) -> &SIntegral {
        &self.s
    }

    fn check_t(&self, t: f64) -> Result<f64> {
        let tmax = self.first_zero;
        if !(t >= 0.0 && t <= tmax * (1.0 + 1e-12)) {
            return Err(Error::DomainError(format!(
                "t = {t} outside [0, T_n = {tmax}]"
            )));
        }
        Ok(t.min(tmax))
    }

    /// `(x, 1 - x)` with `x = 1 - w^{n-1}(t)`.
    fn split(&self, t: f64) -> Result<(f64, f64)> {
        let t = self.check_t(t)?;
        let y = ((2.0 / self.c).sqrt() * t).min(self.s.total());
        if t == self.first_zero {
            return Ok((1.0, 0.0));
        }
        self.s.invert_split(y)
    }

    /// `ln w(t)`; `-inf` at the first zero.
    pub fn ln_w(&self, t: f64) -> Result<f64> {
        let (_, xi) = self.split(t)?;
        Ok(xi.ln() / (self.n - 1.0))
    }

    pub fn w(&self, t: f64) -> Result<f64> {
        self.ln_w(t).map(f64::exp)
    }

    /// `w'(t) = -sqrt(2/c)/(n-1) (w^{1-n} - 1)^{1/2}`.
    pub fn w_prime(&self, t: f64) -> Result<f64> {
        let (x, xi) = self.split(t)?;
        Ok(-(2.0 / self.c).sqrt() / (self.n - 1.0) * (x / xi).sqrt())
    }
}

/// `w(t)` for the profile with parameters `(n, c)`.
pub fn profile_w(t: f64, n: f64, c: f64) -> Result<f64> {
    OneDProfile::new(n, c)?.w(t)
}

/// Outcome of the `c_n` root search with its certificates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CnConstruction {
    pub n: f64,
    pub c: f64,
    pub c_lower: f64,
    pub c_upper: f64,
    pub residual: f64,
    /// Whether `F` increased across the sampled points of the bracket.
    pub monotone: bool,
    /// `F` just above `c_lower` (negative by construction).
    pub f_near_lower: f64,
}

/// `F(c) = w_c^{n+1}(1) - 2/(c (n-1)^2) S_n^{-1}(sqrt(2/c))`.
pub fn matching_function(c: f64, n: f64, s: &SIntegral) -> Result<f64> {
    let y = (2.0 / c).sqrt();
    if y > s.total() * (1.0 + 1e-13) {
        return Err(Error::DomainError(format!(
            "c = {c} is below the admissible range (first zero before t = 1)"
        )));
    }
    let (x, xi) = s.invert_split(y.min(s.total()))?;
    let w_pow = ((n + 1.0) / (n - 1.0) * xi.ln()).exp();
    Ok(w_pow - 2.0 * x / (c * (n - 1.0) * (n - 1.0)))
}

/// Finds the `c_n` for which the linear continuation of `w` past `t = 1` hits
/// zero at `t = 2`. Bisection to a `1e-6` bracket, then secant polish.
pub fn construct_cn(n: f64) -> Result<CnConstruction> {
    let s = SIntegral::new(n)?;
    let lower = c_lower(n)?;
    let upper = c_upper(n)?;
    let f = |c: f64| matching_function(c, n, &s);

    let mut a = lower * (1.0 + 1e-6);
    let mut b = upper;
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    let f_near_lower = fa;
    if !(fa < 0.0 && fb > 0.0) {
        return Err(Error::ConstructionFailure { f_lo: fa, f_hi: fb });
    }
    let samples: Vec<f64> = (0..=8)
        .map(|k| f(a + (b - a) * k as f64 / 8.0))
        .collect::<Result<_>>()?;
    let monotone = samples.windows(2).all(|p| p[1] > p[0]);

    while b - a > 1e-6 * b {
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        if fm < 0.0 {
            a = m;
            fa = fm;
        } else {
            b = m;
            fb = fm;
        }
    }
    // Secant polish, kept inside the bracket.
    let (mut c, mut fc) = if fa.abs() < fb.abs() {
        (a, fa)
    } else {
        (b, fb)
    };
    for _ in 0..60 {
        if fc.abs() <= 1e-14 {
            break;
        }
        let mut next = b - fb * (b - a) / (fb - fa);
        if !(next > a && next < b) {
            next = 0.5 * (a + b);
        }
        let fnext = f(next)?;
        if fnext < 0.0 {
            a = next;
            fa = fnext;
        } else {
            b = next;
            fb = fnext;
        }
        c = next;
        fc = fnext;
        if b - a <= 4.0 * f64::EPSILON * b {
            break;
        }
    }
    Ok(CnConstruction {
        n,
        c,
        c_lower: lower,
        c_upper: upper,
        residual: fc,
        monotone,
        f_near_lower,
    })
}

pub fn find_cn(n: f64) -> Result<f64> {
    construct_cn(n).map(|r| r.c)
}

/// The even solution on `(-2, 2)` of `-u'' = chi_(-1,1) / u^n` built from `c_n`:
/// `y = w` on `[0, 1]`, `y = w(1) (2 - t)` on `[1, 2]`, `u = alpha y`.
#[derive(Debug, Clone)]
pub struct PiecewiseProfile {
    profile: OneDProfile,
    ln_w1: f64,
}

impl PiecewiseProfile {
    pub fn new(n: f64, c: f64) -> Result<Self> {
        let profile = OneDProfile::new(n, c)?;
        if profile.first_zero() < 1.0 {
            return Err(Error::DomainError(format!(
                "c = {c} gives first zero {} < 1",
                profile.first_zero()
            )));
        }
        let ln_w1 = profile.ln_w(1.0)?;
        Ok(Self { profile, ln_w1 })
    }

    /// Builds the profile from the root of the matching condition.
    pub fn construct(n: f64) -> Result<Self> {
        Self::new(n, find_cn(n)?)
    }

    pub fn profile(&self) -> &OneDProfile {
        &self.profile
    }

    fn check(&self, t: f64) -> Result<f64> {
        if !(t.abs() <= 2.0) {
            return Err(Error::DomainError(format!("t = {t} outside [-2, 2]")));
        }
        Ok(t.abs())
    }

    /// `ln y(|t|)` for `t` in `[-2, 2]`.
    pub fn ln_y(&self, t: f64) -> Result<f64> {
        let t = self.check(t)?;
        if t <= 1.0 {
            self.profile.ln_w(t)
        } else {
            Ok(self.ln_w1 + (2.0 - t).ln())
        }
    }

    pub fn y(&self, t: f64) -> Result<f64> {
        self.ln_y(t).map(f64::exp)
    }

    /// Derivative from the left (`side < 0`) or right of `t` in `[0, 2]`.
    pub fn y_prime(&self, t: f64, side: f64) -> Result<f64> {
        let t = self.check(t)?;
        if t < 1.0 || (t == 1.0 && side < 0.0) {
            self.profile.w_prime(t)
        } else {
            Ok(-self.ln_w1.exp())
        }
    }

    /// `u(t) = alpha y(t)`.
    pub fn u(&self, t: f64) -> Result<f64> {
        Ok(self.profile.alpha() * self.y(t)?)
    }

    /// `v(t) = u^{n+1}/(n+1) = c (n-1)/(n+1) y^{n+1}`.
    pub fn v(&self, t: f64) -> Result<f64> {
        let n = self.profile.n();
        let ln = (self.profile.c() * (n - 1.0) / (n + 1.0)).ln() + (n + 1.0) * self.ln_y(t)?;
        Ok(ln.exp())
    }
}

/// `y_n(t)` of the piecewise construction for `t` in `[0, 2]`.
pub fn piecewise_y(t: f64, n: f64, c: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&t) {
        return Err(Error::DomainError(format!("t = {t} outside [0, 2]")));
    }
    PiecewiseProfile::new(n, c)?.y(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    /// `f = 1` on `(-R, R)`.
    FullSupport { r: f64 },
    /// `f = chi_(-1,1)` on `(-2, 2)`.
    CompactSupport,
}

/// Closed-form `n -> infinity` limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitProfile {
    pub geometry: Geometry,
}

impl LimitProfile {
    pub fn new(geometry: Geometry) -> Result<Self> {
        if let Geometry::FullSupport { r } = geometry {
            if !(r > 0.0) {
                return Err(Error::DomainError(format!("R must be positive, got {r}")));
            }
        }
        Ok(Self { geometry })
    }

    /// Half-width of the region where the limit of `v` is positive.
    pub fn radius(&self) -> f64 {
        match self.geometry {
            Geometry::FullSupport { r } => r,
            Geometry::CompactSupport => 1.0,
        }
    }

    /// Half-width of the whole domain.
    pub fn domain_radius(&self) -> f64 {
        match self.geometry {
            Geometry::FullSupport { r } => r,
            Geometry::CompactSupport => 2.0,
        }
    }

    /// `g(t) = cos^2(pi t / 2R)` inside, 0 outside.
    pub fn g(&self, t: f64) -> f64 {
        let r = self.radius();
        if t.abs() >= r {
            0.0
        } else {
            (PI * t / (2.0 * r)).cos().powi(2)
        }
    }

    /// `v(t) = (2R^2/pi^2) g(t)`.
    pub fn v(&self, t: f64) -> f64 {
        let r = self.radius();
        2.0 * r * r / (PI * PI) * self.g(t)
    }

    /// Pointwise limit of `u_n`: 1 inside, the affine hat `2 - |t|` outside.
    pub fn u(&self, t: f64) -> f64 {
        match self.geometry {
            Geometry::FullSupport { r } => {
                if t.abs() < r {
                    1.0
                } else {
                    0.0
                }
            }
            Geometry::CompactSupport => {
                if t.abs() <= 1.0 {
                    1.0
                } else {
                    (2.0 - t.abs()).max(0.0)
                }
            }
        }
    }
}

pub fn limit_profiles(geometry: Geometry) -> Result<LimitProfile> {
    LimitProfile::new(geometry)
}
