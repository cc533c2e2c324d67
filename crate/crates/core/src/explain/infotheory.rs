//! Exact entropies and mutual informations on finite joint tables, in bits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint probability table over named discrete variables, row-major with
/// the last variable varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    names: Vec<String>,
    cards: Vec<usize>,
    probs: Vec<f64>,
}

/// Pointwise attribution at one instance; `defined` is false when the
/// conditioning instance has zero probability, in which case `bits` is 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseValue {
    pub bits: f64,
    pub defined: bool,
}

fn plogp_sum(p: impl Iterator<Item = f64>) -> f64 {
    -p.filter(|&q| q > 0.0).map(|q| q * q.log2()).sum::<f64>()
}

impl DiscreteDistribution {
    pub fn new(names: &[&str], cards: &[usize], probs: Vec<f64>) -> Result<Self> {
        if names.len() != cards.len() || names.is_empty() {
            return Err(Error::Input("one cardinality per variable is required".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Input(format!("duplicate variable `{n}`")));
            }
        }
        if cards.contains(&0) {
            return Err(Error::Input("cardinalities must be positive".into()));
        }
        let size: usize = cards.iter().product();
        if probs.len() != size {
            return Err(Error::Input(format!("table has {} entries, expected {size}", probs.len())));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Input("probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Input(format!("probabilities sum to {total}, not 1")));
        }
        Ok(DiscreteDistribution {
            names: names.iter().map(|s| s.to_string()).collect(),
            cards: cards.to_vec(),
            probs,
        })
    }

    /// Builds a table from an unnormalized weight function over assignments.
    pub fn from_weights(names: &[&str], cards: &[usize], weight: impl Fn(&[usize]) -> f64) -> Result<Self> {
        let size: usize = cards.iter().product();
        let mut w: Vec<f64> = (0..size).map(|i| weight(&Self::decode(cards, i))).collect();
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Input("weights must have positive total".into()));
        }
        w.iter_mut().for_each(|p| *p /= total);
        Self::new(names, cards, w)
    }

    fn decode(cards: &[usize], mut i: usize) -> Vec<usize> {
        let mut out = vec![0; cards.len()];
        for k in (0..cards.len()).rev() {
            out[k] = i % cards[k];
            i /= cards[k];
        }
        out
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn cardinality(&self, name: &str) -> Result<usize> {
        Ok(self.cards[self.index(name)?])
    }

    /// Every assignment with its probability.
    pub fn entries(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, &p)| (Self::decode(&self.cards, i), p))
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Input(format!("unknown variable `{name}`")))
    }

    fn indices(&self, vars: &[&str]) -> Result<Vec<usize>> {
        let idx: Vec<usize> = vars.iter().map(|v| self.index(v)).collect::<Result<_>>()?;
        for (i, a) in idx.iter().enumerate() {
            if idx[..i].contains(a) {
                return Err(Error::Input(format!("variable `{}` listed twice", self.names[*a])));
            }
        }
        Ok(idx)
    }

    /// Marginal table over `vars`, flattened in the order given.
    pub fn marginal(&self, vars: &[&str]) -> Result<Vec<f64>> {
        let idx = self.indices(vars)?;
        let size: usize = idx.iter().map(|&i| self.cards[i]).product();
        let mut out = vec![0.0; size];
        for (assign, p) in self.entries() {
            let mut k = 0;
            for &i in &idx {
                k = k * self.cards[i] + assign[i];
            }
            out[k] += p;
        }
        Ok(out)
    }

    /// Probability that each variable in `vars` takes the matching value.
    pub fn prob_of(&self, vars: &[&str], values: &[usize]) -> Result<f64> {
        if vars.len() != values.len() {
            return Err(Error::Input("one value per variable is required".into()));
        }
        let idx = self.indices(vars)?;
        for (&i, &v) in idx.iter().zip(values) {
            if v >= self.cards[i] {
                return Err(Error::Input(format!(
                    "value {v} out of range for `{}`",
                    self.names[i]
                )));
            }
        }
        Ok(self
            .entries()
            .filter(|(a, _)| idx.iter().zip(values).all(|(&i, &v)| a[i] == v))
            .map(|(_, p)| p)
            .sum())
    }

    /// `H(vars)`; the empty set has entropy 0.
    pub fn entropy(&self, vars: &[&str]) -> Result<f64> {
        if vars.is_empty() {
            return Ok(0.0);
        }
        Ok(plogp_sum(self.marginal(vars)?.into_iter()))
    }

    /// `H(Y | X) = H(X, Y) − H(X)`.
    pub fn conditional_entropy(&self, y: &[&str], given: &[&str]) -> Result<f64> {
        let joint: Vec<&str> = given.iter().chain(y).copied().collect();
        Ok(self.entropy(&joint)? - self.entropy(given)?)
    }

    /// `I(X; Y) = H(X) + H(Y) − H(X, Y)`.
    pub fn mutual_information(&self, x: &[&str], y: &[&str]) -> Result<f64> {
        let joint: Vec<&str> = x.iter().chain(y).copied().collect();
        Ok(self.entropy(x)? + self.entropy(y)? - self.entropy(&joint)?)
    }

    /// `I(X; Y | Z) = H(X, Z) + H(Y, Z) − H(X, Y, Z) − H(Z)`.
    pub fn conditional_mutual_information(&self, x: &[&str], y: &[&str], z: &[&str]) -> Result<f64> {
        let xz: Vec<&str> = x.iter().chain(z).copied().collect();
        let yz: Vec<&str> = y.iter().chain(z).copied().collect();
        let xyz: Vec<&str> = x.iter().chain(y).chain(z).copied().collect();
        Ok(self.entropy(&xz)? + self.entropy(&yz)? - self.entropy(&xyz)? - self.entropy(z)?)
    }

    /// `IG(Y, X) = H(Y) − H(Y | X)`.
    pub fn info_gain(&self, y: &[&str], x: &[&str]) -> Result<f64> {
        Ok(self.entropy(y)? - self.conditional_entropy(y, x)?)
    }

    /// Every variable other than `x_i` and `y`.
    fn rest(&self, x_i: &str, y: &str) -> Result<Vec<&str>> {
        self.indices(&[x_i, y])?;
        Ok(self
            .names
            .iter()
            .map(String::as_str)
            .filter(|n| *n != x_i && *n != y)
            .collect())
    }

    /// Relative importance: `I(X_i; Y | X∖X_i)`.
    pub fn rfi(&self, x_i: &str, y: &str) -> Result<f64> {
        let rest = self.rest(x_i, y)?;
        self.conditional_mutual_information(&[x_i], &[y], &rest)
    }

    /// Global importance: `I(X_i; Y)`.
    pub fn gfi(&self, x_i: &str, y: &str) -> Result<f64> {
        self.mutual_information(&[x_i], &[y])
    }

    /// Instance importance: pointwise conditional mutual information
    /// `log₂ p(x_i, y | r) / (p(x_i | r) p(y | r))` at the given values,
    /// where `rest` assigns every other variable.
    pub fn sfi(&self, x_i: (&str, usize), y: (&str, usize), rest: &[(&str, usize)]) -> Result<PointwiseValue> {
        let expected = self.rest(x_i.0, y.0)?;
        if rest.len() != expected.len() || expected.iter().any(|n| !rest.iter().any(|r| r.0 == *n)) {
            return Err(Error::Input(format!(
                "instance must assign exactly the remaining variables {expected:?}"
            )));
        }
        let (rn, rv): (Vec<&str>, Vec<usize>) = rest.iter().copied().unzip();
        let with = |extra: &[(&str, usize)]| -> Result<f64> {
            let mut n = rn.clone();
            let mut v = rv.clone();
            for e in extra {
                n.push(e.0);
                v.push(e.1);
            }
            self.prob_of(&n, &v)
        };
        let p_r = with(&[])?;
        let p_xr = with(&[x_i])?;
        let p_yr = with(&[y])?;
        let p_xyr = with(&[x_i, y])?;
        if p_r == 0.0 || p_xr == 0.0 || p_yr == 0.0 || p_xyr == 0.0 {
            return Ok(PointwiseValue {
                bits: 0.0,
                defined: false,
            });
        }
        Ok(PointwiseValue {
            bits: (p_xyr * p_r / (p_xr * p_yr)).log2(),
            defined: true,
        })
    }
}

/// Uniform binary variable `X`.
pub fn fair_coin() -> DiscreteDistribution {
    DiscreteDistribution::new(&["X"], &[2], vec![0.5, 0.5]).expect("valid table")
}

/// `Y = X1 XOR X2` with independent uniform bits.
pub fn xor_table() -> DiscreteDistribution {
    DiscreteDistribution::from_weights(&["X1", "X2", "Y"], &[2, 2, 2], |a| {
        f64::from(u8::from(a[2] == a[0] ^ a[1]))
    })
    .expect("valid table")
}

/// `X2` an exact copy of `X1`, with `Y` a noisy copy of `X1`.
pub fn redundant_copy_table() -> DiscreteDistribution {
    DiscreteDistribution::from_weights(&["X1", "X2", "Y"], &[2, 2, 2], |a| {
        if a[0] != a[1] {
            0.0
        } else if a[2] == a[0] {
            0.8
        } else {
            0.2
        }
    })
    .expect("valid table")
}

/// `Y` independent of `X`.
pub fn independent_table() -> DiscreteDistribution {
    let px = [0.3, 0.7];
    let py = [0.6, 0.1, 0.3];
    DiscreteDistribution::from_weights(&["X", "Y"], &[2, 3], |a| px[a[0]] * py[a[1]]).expect("valid table")
}

/// One named identity checked on a built-in table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoCheck {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    pub passed: bool,
}

fn check(name: &str, value: f64, expected: f64) -> InfoCheck {
    InfoCheck {
        name: name.into(),
        value,
        expected,
        passed: (value - expected).abs() <= 1e-12,
    }
}

/// Information gain, chain rule and the three importance measures on the
/// built-in tables.
pub fn demo_checks() -> Result<Vec<InfoCheck>> {
    let coin = fair_coin();
    let ind = independent_table();
    let xor = xor_table();
    let red = redundant_copy_table();
    let mut out = vec![
        check("fair_coin.H(X)", coin.entropy(&["X"])?, 1.0),
        check("independent.I(X;Y)", ind.mutual_information(&["X"], &["Y"])?, 0.0),
        check("independent.IG(Y,X)", ind.info_gain(&["Y"], &["X"])?, 0.0),
        check("xor.I(X1;Y)", xor.mutual_information(&["X1"], &["Y"])?, 0.0),
        check(
            "xor.I(X1;Y|X2)",
            xor.conditional_mutual_information(&["X1"], &["Y"], &["X2"])?,
            1.0,
        ),
        check("xor.I(X1,X2;Y)", xor.mutual_information(&["X1", "X2"], &["Y"])?, 1.0),
    ];
    for (name, d) in [("xor", &xor), ("redundant", &red), ("independent3", &xor_noise_table())] {
        let lhs = d.mutual_information(&["X1", "X2"], &["Y"])?;
        let rhs = d.mutual_information(&["X1"], &["Y"])?
            + d.conditional_mutual_information(&["X2"], &["Y"], &["X1"])?;
        out.push(check(&format!("{name}.chain_rule"), lhs - rhs, 0.0));
        let ig = d.info_gain(&["Y"], &["X1"])?;
        let mi = d.mutual_information(&["X1"], &["Y"])?;
        out.push(check(&format!("{name}.IG_equals_MI"), ig - mi, 0.0));
    }
    out.push(check("redundant.RFI(X2)", red.rfi("X2", "Y")?, 0.0));
    out.push(check(
        "redundant.GFI(X2)-GFI(X1)",
        red.gfi("X2", "Y")? - red.gfi("X1", "Y")?,
        0.0,
    ));
    let h_y = xor.entropy(&["Y"])?;
    let copy = DiscreteDistribution::from_weights(&["X", "Y"], &[2, 2], |a| f64::from(u8::from(a[0] == a[1])))?;
    out.push(check("copy.GFI(X)", copy.gfi("X", "Y")?, h_y));
    Ok(out)
}

/// A 3-variable table with no exact structure, for identity checks.
pub fn xor_noise_table() -> DiscreteDistribution {
    DiscreteDistribution::from_weights(&["X1", "X2", "Y"], &[2, 3, 2], |a| {
        let base = [0.11, 0.07, 0.19, 0.05, 0.13, 0.02];
        base[a[0] * 3 + a[1]] * if a[2] == (a[0] + a[1]) % 2 { 0.7 } else { 0.3 }
    })
    .expect("valid table")
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    /// `Σ p(x,y) log₂ p(x,y)/(p(x)p(y))` straight from a 2-D table.
    fn mi_direct(joint: &[Vec<f64>]) -> f64 {
        let px: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
        let py: Vec<f64> = (0..joint[0].len()).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
        let mut total = 0.0;
        for (i, row) in joint.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    total += p * (p / (px[i] * py[j])).log2();
                }
            }
        }
        total
    }

    fn tables() -> Vec<DiscreteDistribution> {
        vec![xor_table(), redundant_copy_table(), xor_noise_table()]
    }

    #[test]
    fn fair_coin_has_one_bit() {
        assert_eq!(fair_coin().entropy(&["X"]).unwrap(), 1.0);
    }

    #[test]
    fn independent_variables_share_nothing() {
        let d = independent_table();
        assert!(d.mutual_information(&["X"], &["Y"]).unwrap().abs() < 1e-12);
        assert!(d.info_gain(&["Y"], &["X"]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn xor_example() {
        let d = xor_table();
        assert!(d.mutual_information(&["X1"], &["Y"]).unwrap().abs() < 1e-12);
        assert!((d.conditional_mutual_information(&["X1"], &["Y"], &["X2"]).unwrap() - 1.0).abs() < 1e-12);
        assert!((d.mutual_information(&["X1", "X2"], &["Y"]).unwrap() - 1.0).abs() < 1e-12);
        assert!((d.rfi("X1", "Y").unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_copy_example() {
        let d = redundant_copy_table();
        let g1 = d.gfi("X1", "Y").unwrap();
        assert!(g1 > 0.0);
        assert!((d.gfi("X2", "Y").unwrap() - g1).abs() < 1e-12);
        assert!(d.rfi("X2", "Y").unwrap().abs() < 1e-12);
        let noisy = 1.0 + 0.8 * 0.8f64.log2() + 0.2 * 0.2f64.log2();
        assert!((g1 - noisy).abs() < 1e-12);
    }

    #[test]
    fn conditionally_independent_feature_has_zero_rfi() {
        let d = DiscreteDistribution::from_weights(&["X1", "X2", "Y"], &[2, 2, 2], |a| {
            let pz = [0.4, 0.6][a[1]];
            let px = if a[0] == a[1] { 0.7 } else { 0.3 };
            let py = if a[2] == a[1] { 0.9 } else { 0.1 };
            pz * px * py
        })
        .unwrap();
        assert!(d.rfi("X1", "Y").unwrap().abs() < 1e-12);
        assert!(d.gfi("X1", "Y").unwrap() > 0.0);
    }

    #[test]
    fn deterministic_uniform_copy_gfi_is_entropy() {
        let d = DiscreteDistribution::from_weights(&["X", "Y"], &[4, 4], |a| f64::from(u8::from(a[0] == a[1]))).unwrap();
        assert!((d.gfi("X", "Y").unwrap() - d.entropy(&["Y"]).unwrap()).abs() < 1e-12);
        assert!((d.entropy(&["Y"]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mutual_information_matches_direct_sum() {
        for d in tables() {
            let m = d.marginal(&["X1", "Y"]).unwrap();
            let joint: Vec<Vec<f64>> = m.chunks(2).map(<[f64]>::to_vec).collect();
            let direct = mi_direct(&joint);
            assert!((d.mutual_information(&["X1"], &["Y"]).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_rule_and_info_gain_on_corpus() {
        for d in tables() {
            let lhs = d.mutual_information(&["X1", "X2"], &["Y"]).unwrap();
            let rhs = d.mutual_information(&["X1"], &["Y"]).unwrap()
                + d.conditional_mutual_information(&["X2"], &["Y"], &["X1"]).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
            for x in ["X1", "X2"] {
                let ig = d.info_gain(&["Y"], &[x]).unwrap();
                let h = d.entropy(&["Y"]).unwrap() - d.conditional_entropy(&["Y"], &[x]).unwrap();
                assert!((ig - d.mutual_information(&[x], &["Y"]).unwrap()).abs() < 1e-12);
                assert!((ig - h).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sfi_averages_to_rfi() {
        for d in tables() {
            let mut avg = 0.0;
            for (a, p) in d.entries() {
                if p > 0.0 {
                    let v = d.sfi(("X1", a[0]), ("Y", a[2]), &[("X2", a[1])]).unwrap();
                    assert!(v.defined);
                    avg += p * v.bits;
                }
            }
            assert!((avg - d.rfi("X1", "Y").unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn sfi_zero_probability_is_flagged() {
        let d = redundant_copy_table();
        let v = d.sfi(("X1", 0), ("Y", 0), &[("X2", 1)]).unwrap();
        assert_eq!(v, PointwiseValue { bits: 0.0, defined: false });
        assert!(d.sfi(("X1", 0), ("Y", 0), &[]).is_err());
    }

    #[test]
    fn invalid_tables_and_names() {
        assert!(DiscreteDistribution::new(&["X"], &[2], vec![0.5, 0.6]).is_err());
        assert!(DiscreteDistribution::new(&["X"], &[2], vec![-0.5, 1.5]).is_err());
        assert!(DiscreteDistribution::new(&["X", "X"], &[1, 2], vec![0.5, 0.5]).is_err());
        assert!(DiscreteDistribution::new(&["X"], &[3], vec![0.5, 0.5]).is_err());
        let d = fair_coin();
        assert!(matches!(d.entropy(&["Z"]), Err(Error::Input(_))));
        assert!(d.gfi("X", "Q").is_err());
    }

    #[test]
    fn demo_checks_all_pass() {
        let checks = demo_checks().unwrap();
        assert!(checks.len() >= 10);
        for c in checks {
            assert!(c.passed, "{c:?}");
        }
    }

    proptest! {
        #[test]
        fn chain_rule_on_random_tables(w in prop::collection::vec(0.0..1.0f64, 12)) {
            prop_assume!(w.iter().sum::<f64>() > 1e-3);
            let d = DiscreteDistribution::from_weights(&["X1", "X2", "Y"], &[2, 3, 2], |a| w[a[0] * 6 + a[1] * 2 + a[2]]).unwrap();
            let lhs = d.mutual_information(&["X1", "X2"], &["Y"]).unwrap();
            let rhs = d.mutual_information(&["X1"], &["Y"]).unwrap()
                + d.conditional_mutual_information(&["X2"], &["Y"], &["X1"]).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
            prop_assert!(d.mutual_information(&["X1"], &["Y"]).unwrap() >= -1e-12);
            prop_assert!(d.rfi("X2", "Y").unwrap() >= -1e-12);
        }
    }
}
