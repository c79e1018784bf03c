//! The stage permutation grammar `[L][LG][G]` / `[L][L//G][G]`.

use std::fmt;
use std::str::FromStr;

use crate::attention::AttnKind;
use crate::error::{Error, Result};

/// How stages 2 and 3 combine their local and global mixers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MiddleMode {
    /// Local blocks followed by global blocks.
    Series,
    /// Each block splits channels between a local and a global branch.
    Parallel,
}

/// Parsed permutation: attention kinds per stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PermutationSpec {
    pub stage1: AttnKind,
    pub middle_local: AttnKind,
    pub middle_global: AttnKind,
    pub middle_mode: MiddleMode,
    pub stage4: AttnKind,
}

impl fmt::Display for PermutationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sep = match self.middle_mode {
            MiddleMode::Series => "",
            MiddleMode::Parallel => "//",
        };
        write!(
            f,
            "[{}][{}{}{}][{}]",
            self.stage1.token(),
            self.middle_local.token(),
            sep,
            self.middle_global.token(),
            self.stage4.token()
        )
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        match self.s.get(self.pos) {
            Some(&b) if b == c => {
                self.pos += 1;
                Ok(())
            }
            Some(&b) => Err(self.err(format!("expected '{}', found '{}'", c as char, b as char))),
            None => Err(self.err(format!("expected '{}', found end of input", c as char))),
        }
    }

    fn kind(&mut self, want_local: Option<bool>) -> Result<AttnKind> {
        let start = self.pos;
        let tok = self
            .s
            .get(start..start + 2)
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(AttnKind::from_token)
            .ok_or_else(|| self.err("expected one of L1, L2, G1, G2"))?;
        if let Some(local) = want_local {
            if tok.is_local() != local {
                let what = if local { "a local kind (L1 or L2)" } else { "a global kind (G1 or G2)" };
                return Err(self.err(format!("expected {what}, found {}", tok.token())));
            }
        }
        self.pos += 2;
        Ok(tok)
    }
}

/// Parses a permutation string such as `[L1][L1G2][G1]` or `[L2][L2//G2][G1]`.
pub fn parse_permutation(s: &str) -> Result<PermutationSpec> {
    let mut p = Parser { s: s.as_bytes(), pos: 0 };
    p.expect(b'[')?;
    let stage1 = p.kind(Some(true))?;
    p.expect(b']')?;
    p.expect(b'[')?;
    let middle_local = p.kind(Some(true))?;
    let middle_mode = if p.s[p.pos..].starts_with(b"//") {
        p.pos += 2;
        MiddleMode::Parallel
    } else {
        MiddleMode::Series
    };
    let middle_global = p.kind(Some(false))?;
    p.expect(b']')?;
    p.expect(b'[')?;
    let stage4 = p.kind(Some(false))?;
    p.expect(b']')?;
    if p.pos != p.s.len() {
        return Err(p.err("trailing characters"));
    }
    Ok(PermutationSpec {
        stage1,
        middle_local,
        middle_global,
        middle_mode,
        stage4,
    })
}

impl FromStr for PermutationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_permutation(s)
    }
}

impl TryFrom<String> for PermutationSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        parse_permutation(&s)
    }
}

impl From<PermutationSpec> for String {
    fn from(p: PermutationSpec) -> String {
        p.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_rows() {
        let p = parse_permutation("[L1][L1G2][G1]").unwrap();
        assert_eq!(p.middle_mode, MiddleMode::Series);
        assert_eq!((p.stage1, p.middle_local, p.middle_global, p.stage4),
            (AttnKind::CsWin, AttnKind::CsWin, AttnKind::Osra, AttnKind::Mhsa));
        let p = parse_permutation("[L2][L2//G2][G1]").unwrap();
        assert_eq!(p.middle_mode, MiddleMode::Parallel);
        assert_eq!((p.middle_local, p.middle_global), (AttnKind::Masa, AttnKind::Osra));
        assert_eq!(p.to_string(), "[L2][L2//G2][G1]");
    }

    #[test]
    fn errors_carry_positions() {
        let pos = |s: &str| match parse_permutation(s) {
            Err(Error::Parse { pos, .. }) => pos,
            other => panic!("{s}: {other:?}"),
        };
        assert_eq!(pos("[G1][L1G1][G1]"), 1);
        assert_eq!(pos("[L1][L1L2][G1]"), 7);
        assert_eq!(pos("[L1][L1G2][L1]"), 11);
        assert_eq!(pos("[L1][L1G2][G1]x"), 14);
        assert_eq!(pos("[L1][L1G2]"), 10);
        assert_eq!(pos("L1"), 0);
        assert_eq!(pos("[L3][L1G2][G1]"), 1);
    }
}
