//! Model formulas in the `lme4` style: `y ~ x + z + (1 + z | id)`.
//!
//! Only additive terms are accepted. Each parenthesised `( terms | group )`
//! block introduces one random-effect group; several blocks on the same
//! grouping factor are mutually independent.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// An additive list of variables with an optional intercept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermList {
    pub intercept: bool,
    pub vars: Vec<String>,
}

impl TermList {
    /// Number of design columns this list produces.
    pub fn width(&self) -> usize {
        self.vars.len() + usize::from(self.intercept)
    }

    /// Column labels, intercept first.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.width());
        if self.intercept {
            out.push("(Intercept)".to_string());
        }
        out.extend(self.vars.iter().cloned());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomGroup {
    pub grouping: String,
    pub terms: TermList,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelFormula {
    pub response: String,
    pub fixed: TermList,
    pub re_groups: Vec<RandomGroup>,
}

impl ModelFormula {
    /// Total number of random effects per group.
    pub fn n_random(&self) -> usize {
        self.re_groups.iter().map(|g| g.terms.width()).sum()
    }

    /// Sizes of the independent covariance blocks, in formula order.
    pub fn block_sizes(&self) -> Vec<usize> {
        self.re_groups.iter().map(|g| g.terms.width()).collect()
    }

    /// Whether effects of group `a` may be correlated with those of group `b`.
    /// Distinct groups are always independent blocks.
    pub fn correlated(&self, a: usize, b: usize) -> bool {
        a == b
    }

    /// The single grouping factor shared by every random-effect group.
    pub fn grouping_factor(&self) -> Result<&str> {
        let first =
            self.re_groups.first().ok_or_else(|| Error::InvalidFormula("model has no random-effect group".into()))?;
        if let Some(other) = self.re_groups.iter().find(|g| g.grouping != first.grouping) {
            return Err(Error::InvalidFormula(format!(
                "only one grouping factor is supported, found `{}` and `{}`",
                first.grouping, other.grouping
            )));
        }
        Ok(&first.grouping)
    }

    pub fn fixed_names(&self) -> Vec<String> {
        self.fixed.column_names()
    }

    pub fn random_names(&self) -> Vec<String> {
        self.re_groups.iter().flat_map(|g| g.terms.column_names()).collect()
    }
}

impl fmt::Display for TermList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.intercept { "1" } else { "0" })?;
        for v in &self.vars {
            write!(f, " + {v}")?;
        }
        Ok(())
    }
}

impl fmt::Display for ModelFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ~ {}", self.response, self.fixed)?;
        for g in &self.re_groups {
            write!(f, " + ({} | {})", g.terms, g.grouping)?;
        }
        Ok(())
    }
}

impl core::str::FromStr for ModelFormula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_formula(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Atom {
    One,
    Zero,
    Name(String),
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: &str) -> Result<T> {
        Err(Error::FormulaSyntax { pos: self.pos, msg: msg.to_string() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        match self.peek() {
            Some(b) if b == c => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => self.err(&format!("expected `{}`, found `{}`", c as char, b as char)),
            None => self.err(&format!("expected `{}`, found end of input", c as char)),
        }
    }

    fn name(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        while let Some(&b) = self.src.get(self.pos) {
            let ok = b.is_ascii_alphanumeric() || b == b'_' || b == b'.';
            if !ok {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return match self.src.get(self.pos) {
                Some(&b) => self.err(&format!("unexpected token `{}`", b as char)),
                None => self.err("unexpected end of input"),
            };
        }
        // safe: only ASCII bytes were consumed
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn atom(&mut self) -> Result<Atom> {
        let at = self.pos;
        let word = self.name()?;
        let first = word.as_bytes()[0];
        if first.is_ascii_digit() {
            return match word.as_str() {
                "1" => Ok(Atom::One),
                "0" => Ok(Atom::Zero),
                _ => Err(Error::FormulaSyntax {
                    pos: at,
                    msg: format!("numeric term `{word}` is not allowed (only 0 or 1)"),
                }),
            };
        }
        if first == b'.' && word.len() == 1 {
            return Err(Error::FormulaSyntax { pos: at, msg: "`.` is not supported".into() });
        }
        Ok(Atom::Name(word))
    }

    /// `atom (+ atom)*` inside a random group, terminated by `|`.
    fn random_terms(&mut self, open: usize) -> Result<TermList> {
        let mut atoms = Vec::new();
        if self.peek() == Some(b'|') {
            return Err(Error::EmptyRandomGroup { pos: open });
        }
        loop {
            let at = self.pos;
            atoms.push((at, self.atom()?));
            match self.peek() {
                Some(b'+') => self.pos += 1,
                Some(b'|') => break,
                Some(b) if b == b':' || b == b'*' || b == b'/' => {
                    return self.err("interactions and nesting operators are not supported")
                }
                Some(_) => return self.err("expected `+` or `|`"),
                None => return self.err("unterminated random-effect group"),
            }
        }
        let terms = collect_terms(atoms)?;
        if terms.width() == 0 {
            return Err(Error::EmptyRandomGroup { pos: open });
        }
        Ok(terms)
    }

    fn parse(mut self) -> Result<ModelFormula> {
        let response = match self.atom()? {
            Atom::Name(n) => n,
            _ => return Err(Error::FormulaSyntax { pos: 0, msg: "response must be a variable name".into() }),
        };
        self.expect(b'~')?;
        let mut fixed_atoms = Vec::new();
        let mut re_groups = Vec::new();
        loop {
            match self.peek() {
                Some(b'(') => {
                    let open = self.pos;
                    self.pos += 1;
                    let terms = self.random_terms(open)?;
                    self.expect(b'|')?;
                    let grouping = match self.atom()? {
                        Atom::Name(n) => n,
                        _ => return self.err("grouping factor must be a variable name"),
                    };
                    self.expect(b')')?;
                    re_groups.push(RandomGroup { grouping, terms });
                }
                Some(_) => {
                    let at = self.pos;
                    fixed_atoms.push((at, self.atom()?));
                }
                None => return self.err("expected a term"),
            }
            match self.peek() {
                Some(b'+') => self.pos += 1,
                None => break,
                Some(b) if b == b':' || b == b'*' || b == b'/' => {
                    return self.err("interactions and nesting operators are not supported")
                }
                Some(b) => return self.err(&format!("unexpected token `{}`", b as char)),
            }
        }
        let fixed = collect_terms(fixed_atoms)?;
        let formula = ModelFormula { response, fixed, re_groups };
        check_invariants(&formula)?;
        Ok(formula)
    }
}

fn collect_terms(atoms: Vec<(usize, Atom)>) -> Result<TermList> {
    let mut one = false;
    let mut zero = false;
    let mut vars: Vec<String> = Vec::new();
    for (pos, atom) in atoms {
        match atom {
            Atom::One => one = true,
            Atom::Zero => zero = true,
            Atom::Name(n) => {
                if vars.contains(&n) {
                    return Err(Error::FormulaSyntax { pos, msg: format!("term `{n}` is repeated") });
                }
                vars.push(n);
            }
        }
        if one && zero {
            return Err(Error::FormulaSyntax { pos, msg: "both `0` and `1` given for the intercept".into() });
        }
    }
    Ok(TermList { intercept: !zero, vars })
}

fn check_invariants(f: &ModelFormula) -> Result<()> {
    let resp = &f.response;
    let clash = f.fixed.vars.iter().any(|v| v == resp)
        || f.re_groups.iter().any(|g| &g.grouping == resp || g.terms.vars.iter().any(|v| v == resp));
    if clash {
        return Err(Error::InvalidFormula(format!("response `{resp}` also appears on the right-hand side")));
    }
    for g in &f.re_groups {
        if g.terms.vars.contains(&g.grouping) {
            return Err(Error::InvalidFormula(format!(
                "grouping factor `{}` used as a random-effect term",
                g.grouping
            )));
        }
    }
    Ok(())
}

/// Parse `resp ~ term (+ term)*` where a term is a name, `1`, `0`, or `(re_terms | group)`.
pub fn parse_formula(text: &str) -> Result<ModelFormula> {
    Parser { src: text.as_bytes(), pos: 0 }.parse()
}
