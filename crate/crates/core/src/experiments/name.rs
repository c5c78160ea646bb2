//! Regime names: `FxBy_z` stages chained with `+`, and `GC[x]_Iy-Scale` / `GT[x]_Iy-Scale`.
//!
//! Gammachirp names take an optional `_z` epoch suffix; without it they train for
//! [`DEFAULT_EPOCHS`] epochs and format without the suffix.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::Stage;
use crate::error::{Error, Result};
use crate::frontends::{InitScale, ParamInit};

pub const DEFAULT_EPOCHS: usize = 26;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GammachirpRegime {
    /// `GT`: chirp fixed at zero.
    pub gammatone: bool,
    pub frontend_trainable: bool,
    pub init: ParamInit,
    pub scale: InitScale,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Matrix(Vec<Stage>),
    Gammachirp(GammachirpRegime),
}

impl Regime {
    pub fn parse(name: &str) -> Result<Self> {
        name.parse()
    }

    /// Training stages in order; gammachirp regimes always train the back-end.
    pub fn stages(&self) -> Vec<Stage> {
        match self {
            Regime::Matrix(s) => s.clone(),
            Regime::Gammachirp(g) => vec![Stage {
                frontend_trainable: g.frontend_trainable,
                backend_trainable: true,
                epochs: g.epochs,
            }],
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.stages().iter().map(|s| s.epochs).sum()
    }

    /// True when no stage trains the front-end.
    pub fn frontend_fixed(&self) -> bool {
        self.stages().iter().all(|s| !s.frontend_trainable)
    }
}

fn flag(b: bool) -> char {
    if b {
        't'
    } else {
        'f'
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Matrix(stages) => {
                for (i, s) in stages.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" + ")?;
                    }
                    write!(
                        f,
                        "F{}B{}_{}",
                        flag(s.frontend_trainable),
                        flag(s.backend_trainable),
                        s.epochs
                    )?;
                }
                Ok(())
            }
            Regime::Gammachirp(g) => {
                let init = match g.init {
                    ParamInit::Constant => 'c',
                    ParamInit::Random => 'r',
                };
                let scale = match g.scale {
                    InitScale::Mel => "Mel",
                    InitScale::Linear => "Linear",
                };
                let kind = if g.gammatone { "GT" } else { "GC" };
                write!(f, "{kind}[{}]_I{init}-{scale}", flag(g.frontend_trainable))?;
                if g.epochs != DEFAULT_EPOCHS {
                    write!(f, "_{}", g.epochs)?;
                }
                Ok(())
            }
        }
    }
}

struct Cursor<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn at_end(&self) -> bool {
        self.pos >= self.s.len()
    }

    fn expect(&mut self, lit: &str) -> Result<()> {
        if self.s[self.pos..].starts_with(lit.as_bytes()) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(self.err(format!("expected {lit:?}")))
        }
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.s[self.pos..].starts_with(lit.as_bytes()) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn tf(&mut self) -> Result<bool> {
        match self.peek() {
            Some(b't') => {
                self.pos += 1;
                Ok(true)
            }
            Some(b'f') => {
                self.pos += 1;
                Ok(false)
            }
            _ => Err(self.err("expected 't' or 'f'")),
        }
    }

    fn epochs(&mut self) -> Result<usize> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected an epoch count"));
        }
        let text = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii digits");
        match text.parse::<usize>() {
            Ok(0) | Err(_) => Err(Error::Parse {
                pos: start,
                msg: format!("epoch count {text} must be a positive integer"),
            }),
            Ok(n) => Ok(n),
        }
    }

    fn matrix_stage(&mut self) -> Result<Stage> {
        self.expect("F")?;
        let frontend_trainable = self.tf()?;
        self.expect("B")?;
        let backend_trainable = self.tf()?;
        self.expect("_")?;
        let epochs = self.epochs()?;
        Ok(Stage {
            frontend_trainable,
            backend_trainable,
            epochs,
        })
    }

    fn gammachirp(&mut self, gammatone: bool) -> Result<GammachirpRegime> {
        self.expect("[")?;
        let frontend_trainable = self.tf()?;
        self.expect("]_I")?;
        let init = match self.peek() {
            Some(b'c') => ParamInit::Constant,
            Some(b'r') => ParamInit::Random,
            _ => return Err(self.err("expected init 'c' or 'r'")),
        };
        self.pos += 1;
        self.expect("-")?;
        let scale = if self.eat("Mel") {
            InitScale::Mel
        } else if self.eat("Linear") {
            InitScale::Linear
        } else {
            return Err(self.err("expected scale \"Mel\" or \"Linear\""));
        };
        let epochs = if self.eat("_") { self.epochs()? } else { DEFAULT_EPOCHS };
        Ok(GammachirpRegime {
            gammatone,
            frontend_trainable,
            init,
            scale,
            epochs,
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(name: &str) -> Result<Self> {
        let mut c = Cursor {
            s: name.as_bytes(),
            pos: 0,
        };
        c.skip_ws();
        if c.at_end() {
            return Err(c.err("empty regime name"));
        }
        let regime = if c.eat("GC") {
            Regime::Gammachirp(c.gammachirp(false)?)
        } else if c.eat("GT") {
            Regime::Gammachirp(c.gammachirp(true)?)
        } else if c.peek() == Some(b'F') {
            let mut stages = vec![c.matrix_stage()?];
            loop {
                c.skip_ws();
                if !c.eat("+") {
                    break;
                }
                c.skip_ws();
                stages.push(c.matrix_stage()?);
            }
            Regime::Matrix(stages)
        } else {
            return Err(c.err("expected \"F\", \"GC\" or \"GT\""));
        };
        c.skip_ws();
        if !c.at_end() {
            return Err(c.err("unexpected trailing input"));
        }
        Ok(regime)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TABLE_NAMES: [&str; 10] = [
        "FfBt_26",
        "FtBt_26",
        "FfBt_26 + FtBf_10",
        "FfBt_13 + FtBt_13",
        "GT[f]_Ic-Mel",
        "GC[f]_Ic-Mel",
        "GC[t]_Ic-Mel",
        "GC[t]_Ic-Linear",
        "GC[t]_Ir-Mel",
        "GC[t]_Ir-Linear",
    ];

    fn st(fe: bool, be: bool, epochs: usize) -> Stage {
        Stage {
            frontend_trainable: fe,
            backend_trainable: be,
            epochs,
        }
    }

    #[test]
    fn table_names_round_trip() {
        for name in TABLE_NAMES {
            let r: Regime = name.parse().unwrap();
            assert_eq!(r.to_string(), name);
            let again: Regime = r.to_string().parse().unwrap();
            assert_eq!(again.stages(), r.stages());
            assert_eq!(again, r);
        }
    }

    #[test]
    fn baseline_is_one_frozen_frontend_stage() {
        let r = Regime::parse("FfBt_26").unwrap();
        assert_eq!(r.stages(), vec![st(false, true, 26)]);
        assert!(r.frontend_fixed());
    }

    #[test]
    fn chained_stages() {
        let r = Regime::parse("FfBt_26 + FtBf_10").unwrap();
        assert_eq!(r.stages(), vec![st(false, true, 26), st(true, false, 10)]);
        let r = Regime::parse("FfBt_13+FtBt_13").unwrap();
        assert_eq!(r.stages(), vec![st(false, true, 13), st(true, true, 13)]);
        assert_eq!(r.to_string(), "FfBt_13 + FtBt_13");
    }

    #[test]
    fn gammachirp_names() {
        let r = Regime::parse("GC[f]_Ic-Mel").unwrap();
        assert_eq!(r.stages(), vec![st(false, true, 26)]);
        let Regime::Gammachirp(g) = Regime::parse("GT[t]_Ir-Linear_5").unwrap() else {
            panic!("expected gammachirp regime");
        };
        assert!(g.gammatone && g.frontend_trainable);
        assert_eq!((g.init, g.scale, g.epochs), (ParamInit::Random, InitScale::Linear, 5));
    }

    #[test]
    fn errors_carry_positions() {
        let pos = |s: &str| match Regime::parse(s) {
            Err(Error::Parse { pos, .. }) => pos,
            other => panic!("{s:?} parsed as {other:?}"),
        };
        assert_eq!(pos(""), 0);
        assert_eq!(pos("FxBt_26"), 1);
        assert_eq!(pos("FfBt_"), 5);
        assert_eq!(pos("FfBt_0"), 5);
        assert_eq!(pos("FfBt_26 +"), 9);
        assert_eq!(pos("FfBt_26 x"), 8);
        assert_eq!(pos("GC[t]_Iq-Mel"), 7);
        assert_eq!(pos("GC[t]_Ic-Bark"), 9);
        assert_eq!(pos("XX"), 0);
    }

    fn arb_regime() -> impl Strategy<Value = Regime> {
        let stage = (any::<bool>(), any::<bool>(), 1usize..500).prop_map(|(a, b, e)| st(a, b, e));
        let matrix = prop::collection::vec(stage, 1..5).prop_map(Regime::Matrix);
        let gc = (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>(), 1usize..500).prop_map(
            |(gt, tr, rnd, lin, epochs)| {
                Regime::Gammachirp(GammachirpRegime {
                    gammatone: gt,
                    frontend_trainable: tr,
                    init: if rnd { ParamInit::Random } else { ParamInit::Constant },
                    scale: if lin { InitScale::Linear } else { InitScale::Mel },
                    epochs,
                })
            },
        );
        prop_oneof![matrix, gc]
    }

    proptest! {
        #[test]
        fn format_then_parse_is_identity(r in arb_regime()) {
            let back: Regime = r.to_string().parse().unwrap();
            prop_assert_eq!(back, r);
        }
    }
}
