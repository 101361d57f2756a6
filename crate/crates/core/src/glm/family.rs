use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Bounds applied to binomial means inside the log-likelihood only.
const BINOMIAL_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Normal,
    Binomial,
    Poisson,
    NegativeBinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Identity,
    Logit,
    Log,
    /// g(mu) = ln(mu / (r + mu)), the canonical link of the fixed-r negative binomial.
    NbCanonical,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Normal => "normal",
            Family::Binomial => "binomial",
            Family::Poisson => "poisson",
            Family::NegativeBinomial => "negative-binomial",
        }
    }

    pub fn canonical_link(self) -> Link {
        match self {
            Family::Normal => Link::Identity,
            Family::Binomial => Link::Logit,
            Family::Poisson => Link::Log,
            Family::NegativeBinomial => Link::NbCanonical,
        }
    }
}

impl Link {
    pub fn name(self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Logit => "logit",
            Link::Log => "log",
            Link::NbCanonical => "nb-canonical",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "normal" | "gaussian" => Family::Normal,
            "binomial" => Family::Binomial,
            "poisson" => Family::Poisson,
            "negative-binomial" | "nb" => Family::NegativeBinomial,
            other => return Err(Error::InvalidArgument(format!("unknown family `{other}`"))),
        })
    }
}

impl FromStr for Link {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" => Link::Identity,
            "logit" => Link::Logit,
            "log" => Link::Log,
            "nb-canonical" => Link::NbCanonical,
            other => return Err(Error::InvalidArgument(format!("unknown link `{other}`"))),
        })
    }
}

/// A supported family/link pair, with the negative-binomial `r` when needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyLink {
    family: Family,
    link: Link,
    dispersion_r: Option<f64>,
}

impl FamilyLink {
    pub fn new(family: Family, link: Link, dispersion_r: Option<f64>) -> Result<Self> {
        let supported = matches!(
            (family, link),
            (Family::Normal, Link::Identity)
                | (Family::Binomial, Link::Logit)
                | (Family::Poisson, Link::Log)
                | (Family::NegativeBinomial, Link::NbCanonical)
                | (Family::NegativeBinomial, Link::Log)
        );
        if !supported {
            return Err(Error::UnsupportedFamilyLink {
                family: family.name(),
                link: link.name(),
            });
        }
        let dispersion_r = match (family, dispersion_r) {
            (Family::NegativeBinomial, Some(r)) if r > 0.0 && r.is_finite() => Some(r),
            (Family::NegativeBinomial, _) => {
                return Err(Error::InvalidArgument(
                    "negative-binomial needs a positive dispersion r".into(),
                ))
            }
            (_, Some(_)) => {
                return Err(Error::InvalidArgument(format!(
                    "dispersion r is only meaningful for negative-binomial, not {family}"
                )))
            }
            (_, None) => None,
        };
        Ok(FamilyLink {
            family,
            link,
            dispersion_r,
        })
    }

    /// Canonical pair for `family`.
    pub fn canonical(family: Family, dispersion_r: Option<f64>) -> Result<Self> {
        FamilyLink::new(family, family.canonical_link(), dispersion_r)
    }

    pub fn normal() -> Self {
        FamilyLink::new(Family::Normal, Link::Identity, None).unwrap()
    }

    pub fn binomial() -> Self {
        FamilyLink::new(Family::Binomial, Link::Logit, None).unwrap()
    }

    pub fn poisson() -> Self {
        FamilyLink::new(Family::Poisson, Link::Log, None).unwrap()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn link_kind(&self) -> Link {
        self.link
    }

    pub fn dispersion_r(&self) -> Option<f64> {
        self.dispersion_r
    }

    pub fn is_canonical(&self) -> bool {
        self.family.canonical_link() == self.link
    }

    fn r(&self) -> f64 {
        self.dispersion_r.unwrap_or(f64::NAN)
    }

    pub fn in_link_domain(&self, mu: f64) -> bool {
        mu.is_finite()
            && match self.link {
                Link::Identity => true,
                Link::Logit => mu > 0.0 && mu < 1.0,
                Link::Log | Link::NbCanonical => mu > 0.0,
            }
    }

    /// g(mu), with a domain check.
    pub fn link(&self, mu: f64) -> Result<f64> {
        if !self.in_link_domain(mu) {
            return Err(Error::LinkDomain {
                link: self.link.name(),
                value: mu,
            });
        }
        Ok(match self.link {
            Link::Identity => mu,
            Link::Logit => (mu / (1.0 - mu)).ln(),
            Link::Log => mu.ln(),
            Link::NbCanonical => (mu / (self.r() + mu)).ln(),
        })
    }

    /// g^{-1}(eta). The nb-canonical inverse is only finite for eta < 0.
    pub fn inverse_link(&self, eta: f64) -> f64 {
        match self.link {
            Link::Identity => eta,
            Link::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            Link::Log => eta.exp(),
            Link::NbCanonical => {
                if eta < 0.0 {
                    self.r() * eta.exp() / -eta.exp_m1()
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// d mu / d eta evaluated at mean `mu`.
    pub fn mu_eta(&self, mu: f64) -> f64 {
        match self.link {
            Link::Identity => 1.0,
            Link::Logit => mu * (1.0 - mu),
            Link::Log => mu,
            Link::NbCanonical => mu * (1.0 + mu / self.r()),
        }
    }

    pub fn variance(&self, mu: f64) -> f64 {
        match self.family {
            Family::Normal => 1.0,
            Family::Binomial => mu * (1.0 - mu),
            Family::Poisson => mu,
            Family::NegativeBinomial => mu + mu * mu / self.r(),
        }
    }

    /// Log-likelihood contribution up to terms free of `mu`.
    pub fn log_likelihood(&self, y: f64, mu: f64) -> f64 {
        match self.family {
            Family::Normal => -0.5 * (y - mu) * (y - mu),
            Family::Binomial => {
                let m = mu.clamp(BINOMIAL_CLIP, 1.0 - BINOMIAL_CLIP);
                y * m.ln() + (1.0 - y) * (1.0 - m).ln()
            }
            Family::Poisson => {
                if !(mu > 0.0) || !mu.is_finite() {
                    return f64::NEG_INFINITY;
                }
                let t = if y == 0.0 { 0.0 } else { y * mu.ln() };
                t - mu
            }
            Family::NegativeBinomial => {
                if !(mu > 0.0) || !mu.is_finite() {
                    return f64::NEG_INFINITY;
                }
                let r = self.r();
                let t = if y == 0.0 { 0.0 } else { y * mu.ln() };
                t - (y + r) * (mu + r).ln()
            }
        }
    }

    /// Checks that `y` belongs to the family's outcome domain.
    pub fn check_outcome(&self, y: f64, row: usize) -> Result<()> {
        let ok = y.is_finite()
            && match self.family {
                Family::Normal => true,
                Family::Binomial => y == 0.0 || y == 1.0,
                Family::Poisson | Family::NegativeBinomial => y >= 0.0 && y.fract() == 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::OutcomeDomain {
                row,
                value: y,
                family: self.family.name(),
            })
        }
    }

    /// Starting mean for IRLS.
    pub(crate) fn initial_mean(&self, y: f64, ybar: f64) -> f64 {
        match self.family {
            Family::Normal => y,
            Family::Binomial => (y + 0.5) / 2.0,
            Family::Poisson | Family::NegativeBinomial => (y + ybar.max(0.1)) / 2.0 + 0.05,
        }
    }
}

impl fmt::Display for FamilyLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dispersion_r {
            Some(r) => write!(f, "{}/{} (r = {r})", self.family, self.link),
            None => write!(f, "{}/{}", self.family, self.link),
        }
    }
}
