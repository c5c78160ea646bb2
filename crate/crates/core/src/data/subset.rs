//! Desk-scale corpus restriction: a keyword subset, optional filler class and a
//! per-class clip cap, written as e.g. `3kw+filler,cap=200/class`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{AudioClip, LabelMap, FILLER_WORDS, KEYWORDS};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsetSpec {
    pub keywords: Vec<String>,
    pub filler: bool,
    pub cap_per_class: Option<usize>,
}

impl Default for SubsetSpec {
    fn default() -> Self {
        Self {
            keywords: KEYWORDS.iter().map(|s| s.to_string()).collect(),
            filler: true,
            cap_per_class: None,
        }
    }
}

fn err(pos: usize, msg: impl Into<String>) -> Error {
    Error::Parse { pos, msg: msg.into() }
}

impl FromStr for SubsetSpec {
    type Err = Error;

    /// Accepts `all`, `<n>kw` (first `n` keywords) or `yes/no/up`, optionally followed by
    /// `+filler`, then optionally `,cap=<n>` or `,cap=<n>/class`.
    fn from_str(s: &str) -> Result<Self> {
        let (head, tail) = match s.find(',') {
            Some(i) => (&s[..i], Some((i + 1, &s[i + 1..]))),
            None => (s, None),
        };
        let (words, filler) = match head.strip_suffix("+filler") {
            Some(w) => (w, true),
            None => (head, false),
        };
        let keywords: Vec<String> = if words == "all" {
            KEYWORDS.iter().map(|s| s.to_string()).collect()
        } else if let Some(n) = words.strip_suffix("kw") {
            let n: usize = n.parse().map_err(|_| err(0, format!("bad keyword count {n:?}")))?;
            if n == 0 || n > KEYWORDS.len() {
                return Err(err(0, format!("keyword count must be 1..=10, got {n}")));
            }
            KEYWORDS[..n].iter().map(|s| s.to_string()).collect()
        } else {
            let mut out = Vec::new();
            let mut pos = 0;
            for w in words.split('/') {
                if !KEYWORDS.contains(&w) {
                    return Err(err(pos, format!("{w:?} is not a keyword")));
                }
                out.push(w.to_string());
                pos += w.len() + 1;
            }
            out
        };
        let filler = filler || head == "all";
        let cap_per_class = match tail {
            None => None,
            Some((pos, t)) => {
                let v = t
                    .strip_prefix("cap=")
                    .ok_or_else(|| err(pos, "expected cap=<n>/class"))?;
                let v = v.strip_suffix("/class").unwrap_or(v);
                let n: usize = v
                    .parse()
                    .map_err(|_| err(pos + 4, format!("bad cap {v:?}")))?;
                if n == 0 {
                    return Err(err(pos + 4, "cap must be positive"));
                }
                Some(n)
            }
        };
        Ok(Self {
            keywords,
            filler,
            cap_per_class,
        })
    }
}

impl fmt::Display for SubsetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.keywords.len();
        if n == KEYWORDS.len() && self.filler && self.keywords == KEYWORDS {
            write!(f, "all")?;
        } else if self.keywords.iter().zip(KEYWORDS).all(|(a, b)| a == b) {
            write!(f, "{n}kw")?;
            if self.filler {
                write!(f, "+filler")?;
            }
        } else {
            write!(f, "{}", self.keywords.join("/"))?;
            if self.filler {
                write!(f, "+filler")?;
            }
        }
        if let Some(c) = self.cap_per_class {
            write!(f, ",cap={c}/class")?;
        }
        Ok(())
    }
}

impl SubsetSpec {
    pub fn label_map(&self) -> LabelMap {
        LabelMap {
            keywords: self.keywords.clone(),
            filler_words: if self.filler {
                FILLER_WORDS.iter().map(|s| s.to_string()).collect()
            } else {
                Vec::new()
            },
        }
    }

    /// Applies the per-class cap. Within a class clips are taken in path order; the filler
    /// class takes them round-robin across words so every filler word is represented.
    pub fn select(&self, clips: Vec<AudioClip>) -> Vec<AudioClip> {
        let Some(cap) = self.cap_per_class else {
            return clips;
        };
        let mut by_class: BTreeMap<usize, BTreeMap<String, Vec<AudioClip>>> = BTreeMap::new();
        for c in clips {
            let word = c.rel_path.split('/').next().unwrap_or_default().to_string();
            by_class.entry(c.label).or_default().entry(word).or_default().push(c);
        }
        let mut out = Vec::new();
        for words in by_class.into_values() {
            let mut queues: Vec<std::vec::IntoIter<AudioClip>> = words
                .into_values()
                .map(|mut v| {
                    v.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
                    v.into_iter()
                })
                .collect();
            let mut taken = 0;
            while taken < cap {
                let before = taken;
                for q in queues.iter_mut() {
                    if taken == cap {
                        break;
                    }
                    if let Some(c) = q.next() {
                        out.push(c);
                        taken += 1;
                    }
                }
                if taken == before {
                    break;
                }
            }
        }
        out.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
        out
    }
}
