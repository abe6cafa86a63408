//! Rational enclosures for the tails of gap series.
//!
//! `Σ_{i>N} 1/(i (i+1) (i+α)^e)` is reduced either to digamma differences
//! and Hurwitz zeta values (partial fractions, `α >= 2`) or to a power
//! series in `1/(i+α)` (`α < 2`). Digamma and Hurwitz zeta use the
//! Euler–Maclaurin expansion, whose remainder after a term has the sign of
//! the next term and is smaller in size, so consecutive partial sums bracket
//! the value.
//!
//! Everything runs on fixed-point intervals with outward rounding; the
//! targets are absolute.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

pub type Pair = (BigRational, BigRational);

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// `B_2, B_4, ..., B_14`.
fn bernoulli(k: usize) -> BigRational {
    const B: [(i64, i64); 7] = [(1, 6), (-1, 30), (1, 42), (-1, 30), (5, 66), (-691, 2730), (7, 6)];
    q(B[k - 1].0, B[k - 1].1)
}

fn ceil_div(a: &BigInt, b: &BigInt) -> BigInt {
    let (d, r) = a.div_mod_floor(b);
    if r.is_zero() {
        d
    } else {
        d + 1
    }
}

/// `[lo, hi] · 2^-w`.
#[derive(Clone, Debug)]
struct Iv {
    lo: BigInt,
    hi: BigInt,
}

/// Fixed-point arithmetic on the grid `2^-w`.
struct Fx {
    w: u64,
    unit: BigInt,
}

impl Fx {
    fn new(w: u64) -> Self {
        Self { w, unit: BigInt::one() << w }
    }

    fn rat(&self, r: &BigRational) -> Iv {
        let n = r.numer() << self.w;
        Iv { lo: n.div_floor(r.denom()), hi: ceil_div(&n, r.denom()) }
    }

    fn int(&self, n: i64) -> Iv {
        let v = BigInt::from(n) << self.w;
        Iv { lo: v.clone(), hi: v }
    }

    fn add(&self, a: &Iv, b: &Iv) -> Iv {
        Iv { lo: &a.lo + &b.lo, hi: &a.hi + &b.hi }
    }

    fn sub(&self, a: &Iv, b: &Iv) -> Iv {
        Iv { lo: &a.lo - &b.hi, hi: &a.hi - &b.lo }
    }

    fn floor(&self, v: &BigInt) -> BigInt {
        v >> self.w
    }

    fn ceil(&self, v: &BigInt) -> BigInt {
        -((-v) >> self.w)
    }

    fn mul(&self, a: &Iv, b: &Iv) -> Iv {
        if !a.lo.is_negative() && !b.lo.is_negative() {
            return Iv { lo: self.floor(&(&a.lo * &b.lo)), hi: self.ceil(&(&a.hi * &b.hi)) };
        }
        let p = [&a.lo * &b.lo, &a.lo * &b.hi, &a.hi * &b.lo, &a.hi * &b.hi];
        let min = p.iter().min().unwrap();
        let max = p.iter().max().unwrap();
        Iv { lo: self.floor(min), hi: self.ceil(max) }
    }

    /// `1/a` for `a > 0`.
    fn recip(&self, a: &Iv) -> Iv {
        assert!(a.lo.is_positive(), "reciprocal of a non-positive interval");
        let one = &self.unit * &self.unit;
        Iv { lo: one.div_floor(&a.hi), hi: ceil_div(&one, &a.lo) }
    }

    fn div_int(&self, a: &Iv, d: u64) -> Iv {
        let d = BigInt::from(d);
        Iv { lo: a.lo.div_floor(&d), hi: ceil_div(&a.hi, &d) }
    }

    fn pow(&self, a: &Iv, k: u32) -> Iv {
        (0..k).fold(self.int(1), |acc, _| self.mul(&acc, a))
    }

    fn hull(&self, a: &Iv, b: &Iv) -> Iv {
        Iv { lo: a.lo.clone().min(b.lo.clone()), hi: a.hi.clone().max(b.hi.clone()) }
    }

    fn pair(&self, a: &Iv) -> Pair {
        (BigRational::new(a.lo.clone(), self.unit.clone()), BigRational::new(a.hi.clone(), self.unit.clone()))
    }

    /// `2 atanh(p/s)` for `0 <= p/s <= 1/3`.
    fn two_atanh(&self, p: &BigInt, s: &BigInt) -> Iv {
        let w = self.w + 16;
        let unit = BigInt::one() << w;
        let z_lo = (p << w).div_floor(s);
        let z_hi = ceil_div(&(p << w), s);
        let z2_lo = (&z_lo * &z_lo) >> w;
        let z2_hi = ceil_div(&(&z_hi * &z_hi), &unit);
        let (mut pw_lo, mut pw_hi) = (z_lo, z_hi);
        let (mut lo, mut hi) = (BigInt::zero(), BigInt::zero());
        let mut k = 0u64;
        loop {
            let d = BigInt::from(2 * k + 1);
            lo += pw_lo.div_floor(&d);
            hi += ceil_div(&pw_hi, &d);
            pw_lo = (&pw_lo * &z2_lo) >> w;
            pw_hi = ceil_div(&(&pw_hi * &z2_hi), &unit);
            k += 1;
            if pw_hi <= BigInt::one() {
                // remaining terms sum to at most z^{2k+1} / (1 - z^2) <= 9/8 z^{2k+1}
                hi += 2;
                break;
            }
        }
        // doubled, then back to the grid 2^-self.w
        let shift = BigInt::one() << 15u32;
        Iv { lo: lo.div_floor(&shift), hi: ceil_div(&hi, &shift) }
    }

    /// `ln(num/den)` for `num >= den > 0`.
    fn ln(&self, num: &BigInt, den: &BigInt) -> Iv {
        assert!(num >= den && den.is_positive(), "ln needs a ratio >= 1");
        // num/den = 2^k r with r in [1, 2)
        let mut k = num.bits() as i64 - den.bits() as i64;
        let (mut n2, mut d2) = if k >= 0 { (num.clone(), den << k as u64) } else { (num << (-k) as u64, den.clone()) };
        if n2 < d2 {
            k -= 1;
            n2 <<= 1;
        } else if n2 >= &d2 << 1u32 {
            k += 1;
            d2 <<= 1;
        }
        let frac = self.two_atanh(&(&n2 - &d2), &(&n2 + &d2));
        if k == 0 {
            return frac;
        }
        let extra = 64 - (k as u64).leading_zeros() as u64;
        let fine = Fx::new(self.w + extra);
        let ln2 = fine.two_atanh(&BigInt::one(), &BigInt::from(3));
        let kk = BigInt::from(k);
        let scaled = Iv { lo: (&ln2.lo * &kk) >> extra, hi: ceil_div(&(&ln2.hi * &kk), &(BigInt::one() << extra)) };
        self.add(&frac, &scaled)
    }

    /// `ψ(x) - ln x` for `x >= 1`.
    fn psi_minus_ln(&self, x: &Iv) -> Iv {
        let inv = self.recip(x);
        let inv2 = self.mul(&inv, &inv);
        let mut partial = self.sub(&self.int(0), &self.div_int(&inv, 2));
        let mut power = inv2.clone();
        for k in 1..=6 {
            let c = self.rat(&(bernoulli(k) / q(2 * k as i64, 1)));
            partial = self.sub(&partial, &self.mul(&c, &power));
            power = self.mul(&power, &inv2);
        }
        let c = self.rat(&(bernoulli(7) / q(14, 1)));
        let next = self.sub(&partial, &self.mul(&c, &power));
        self.hull(&partial, &next)
    }

    /// `ψ(y) - ψ(n)` for an integer `n >= 1` and `y >= n`.
    fn psi_difference(&self, y: &Iv, n: u64) -> Iv {
        let den = BigInt::from(n) << self.w;
        let ln = Iv { lo: self.ln(&y.lo, &den).lo, hi: self.ln(&y.hi, &den).hi };
        let py = self.psi_minus_ln(y);
        let pn = self.psi_minus_ln(&self.int(n as i64));
        self.sub(&self.add(&ln, &py), &pn)
    }

    /// Hurwitz zeta `ζ(s, x) = Σ_{i>=0} (x+i)^{-s}` for `s >= 2`, `x >= 1`.
    fn hurwitz(&self, s: u32, x: &Iv) -> Iv {
        assert!(s >= 2);
        let inv = self.recip(x);
        let lead = self.pow(&inv, s - 1);
        let mut partial = self.add(&self.div_int(&lead, s as u64 - 1), &self.div_int(&self.mul(&lead, &inv), 2));
        // rising factorial s (s+1) ... (s+2k-2) / (2k)!, times x^{-s-2k+1}
        let mut coeff = q(s as i64, 2);
        let inv2 = self.mul(&inv, &inv);
        let mut power = self.mul(&lead, &inv2);
        let mut prev = partial.clone();
        for k in 1..=7u64 {
            prev = partial.clone();
            let c = self.rat(&(bernoulli(k as usize) * &coeff));
            partial = self.add(&partial, &self.mul(&c, &power));
            let a = s as i64 + 2 * k as i64 - 1;
            coeff = coeff * q(a * (a + 1), (2 * k as i64 + 1) * (2 * k as i64 + 2));
            power = self.mul(&power, &inv2);
        }
        self.hull(&prev, &partial)
    }
}

/// Enclosure of `ln r` for rational `r >= 1`, width about `2^-bits`.
pub fn ln_bounds(r: &BigRational, bits: u64) -> Pair {
    let fx = Fx::new(bits + 8);
    fx.pair(&fx.ln(r.numer(), r.denom()))
}

/// Enclosure of `ζ(s, x)`, `s >= 2`, `x >= 1`.
pub fn hurwitz_bounds(s: u32, x: &BigRational, bits: u64) -> Pair {
    let fx = Fx::new(bits + 16);
    fx.pair(&fx.hurwitz(s, &fx.rat(x)))
}

/// `Σ_{i>N} 1/(i (i+1) (i+α)^e)` for `α >= 0`, `e >= 1`, `N >= 1`, with the
/// truncation and rounding below about `2^-bits`.
pub fn gap_tail(alpha: &BigRational, e: u32, n: u64, bits: u64) -> Pair {
    let fx = Fx::new(bits);
    let (lo, hi) = gap_tail_grid(alpha, e, n, bits);
    fx.pair(&Iv { lo, hi })
}

/// [`gap_tail`] as integers on the grid `2^-bits`.
pub fn gap_tail_grid(alpha: &BigRational, e: u32, n: u64, bits: u64) -> (BigInt, BigInt) {
    assert!(e >= 1 && n >= 1 && !alpha.is_negative());
    const GUARD: u64 = 40;
    let fx = Fx::new(bits + GUARD);
    let a = fx.rat(alpha);
    let x = fx.add(&fx.int(n as i64 + 1), &a);
    let out = if *alpha >= q(2, 1) { partial_fractions(&fx, &a, e, n, &x) } else { expansion(&fx, alpha, &a, e, &x, bits + 4) };
    let shift = BigInt::one() << GUARD;
    (out.lo.div_floor(&shift), ceil_div(&out.hi, &shift))
}

fn partial_fractions(fx: &Fx, a: &Iv, e: u32, n: u64, x: &Iv) -> Iv {
    let am1 = fx.sub(a, &fx.int(1));
    let ca = fx.recip(&fx.pow(a, e));
    let cb = fx.recip(&fx.pow(&am1, e));
    let mut out = fx.mul(&ca, &fx.psi_difference(x, n + 1));
    out = fx.sub(&out, &fx.mul(&cb, &fx.psi_difference(x, n + 2)));
    for k in 2..=e {
        // coefficient of (x+α)^{-k}
        let j = e - k;
        let c = fx.sub(&fx.recip(&fx.pow(&am1, j + 1)), &fx.recip(&fx.pow(a, j + 1)));
        out = fx.add(&out, &fx.mul(&c, &fx.hurwitz(k, x)));
    }
    out
}

fn expansion(fx: &Fx, alpha: &BigRational, a: &Iv, e: u32, x: &Iv, bits: u64) -> Iv {
    let am1 = fx.sub(a, &fx.int(1));
    let rho = if *alpha >= q(1, 2) { a.clone() } else { fx.sub(&fx.int(1), a) };
    let inv = fx.recip(x);
    let r = fx.mul(&rho, &inv);
    let target = BigInt::one() << (fx.w - bits);
    let scale_x = fx.pow(&inv, e + 1);
    let one_minus = fx.sub(&fx.int(1), &r);
    let denom = fx.recip(&fx.mul(&one_minus, &one_minus));
    let mut out = fx.int(0);
    let mut c = fx.int(1);
    let mut alpha_pow = fx.int(1);
    let mut r_pow = r.clone();
    for j in 0..400u32 {
        out = fx.add(&out, &fx.mul(&c, &fx.hurwitz(e + 2 + j, x)));
        // |remainder| <= x^{-e-1} (j+2) r^{j+1} / (1-r)^2
        let rem = fx.mul(&fx.mul(&scale_x, &r_pow), &denom).hi * BigInt::from(j + 2);
        if rem <= target {
            return Iv { lo: &out.lo - &rem, hi: &out.hi + &rem };
        }
        alpha_pow = fx.mul(&alpha_pow, a);
        c = fx.add(&alpha_pow, &fx.mul(&am1, &c));
        r_pow = fx.mul(&r_pow, &r);
    }
    unreachable!("the expansion ratio is at most 1/2")
}
