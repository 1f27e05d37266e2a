//! Double-double elementary functions used by the reference evaluators.
//! Arithmetic comes from `twofloat`; its transcendental functions are only
//! accurate to roughly `1e-14` and its double-double division drops the
//! low word, so those are redone here.

use twofloat::TwoFloat;

const LN2: TwoFloat = TwoFloat::from_f64(std::f64::consts::LN_2);
const LN2_LO: f64 = 2.319_046_813_846_299_6e-17;

pub fn dd(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

/// `a / b` by long division with three partial quotients.
pub fn div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let q1 = a.hi() / b.hi();
    let r = a - b * q1;
    let q2 = r.hi() / b.hi();
    let r = r - b * q2;
    let q3 = r.hi() / b.hi();
    TwoFloat::new_add(q1, q2) + q3
}

pub fn exp(x: TwoFloat) -> TwoFloat {
    if x.hi() < -740.0 {
        return dd(0.0);
    }
    let k = (x.hi() / std::f64::consts::LN_2).round();
    let ln2 = LN2 + LN2_LO;
    let r = (x - ln2 * k) / 1024.0;
    let mut term = dd(1.0);
    let mut sum = dd(1.0);
    for n in 1..=12 {
        term = term * r / n as f64;
        sum += term;
    }
    for _ in 0..10 {
        sum = sum * sum;
    }
    sum * 2f64.powi(k as i32)
}

pub fn ln(x: TwoFloat) -> TwoFloat {
    let mut y = dd(x.hi().ln());
    for _ in 0..2 {
        y = y + x * exp(-y) - 1.0;
    }
    y
}

pub fn sqrt(x: TwoFloat) -> TwoFloat {
    if x.hi() <= 0.0 {
        return dd(0.0);
    }
    let s = dd(x.hi().sqrt());
    s + div(x - s * s, s * 2.0)
}

pub fn abs(x: TwoFloat) -> TwoFloat {
    if x.hi() < 0.0 {
        -x
    } else {
        x
    }
}
