//! Architecture strings: sequences of LRCA (`c`) and T-Block (`t`) units.
//!
//! Grammar:
//!
//! ```text
//! arch  := item+
//! item  := count? unit | '(' arch ')' times count
//! unit  := 'c' | 't'
//! times := 'x' | 'X' | '×' | '*'
//! count := [1-9][0-9]*
//! ```
//!
//! `"(2c1t)x4"` expands to `c c t c c t c c t c c t`. The canonical printed
//! form always writes explicit counts and uses `x`, so `"c"` prints as `"1c"`.
//! Whitespace separates tokens. It matters after a group: `"(1t)x1 1t"` is
//! two T-Blocks while `"(1t)x11t"` is twelve.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    /// Light residual channel attention.
    Lrca,
    /// Transformer encoder over spatial tokens.
    TBlock,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Item {
    Run(BlockKind, usize),
    Group(Box<[Item]>, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    items: Vec<Item>,
}

struct Parser<'a> {
    input: &'a str,
    chars: Vec<char>,
    pos: usize,
}

impl Parser<'_> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::Architecture {
            input: self.input.to_string(),
            reason: format!("{} (at position {})", reason.into(), self.pos),
        })
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn count(&mut self) -> Result<Option<usize>> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Ok(None);
        }
        let digits: String = self.chars[start..self.pos].iter().collect();
        match digits.parse::<usize>() {
            Ok(0) => self.fail("counts must be at least 1"),
            Ok(n) => Ok(Some(n)),
            Err(_) => self.fail("count out of range"),
        }
    }

    fn sequence(&mut self, nested: bool) -> Result<Vec<Item>> {
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None if nested => return self.fail("unclosed '('"),
                None => break,
                Some(')') if nested => break,
                Some(')') => return self.fail("unbalanced ')'"),
                Some('(') => {
                    self.pos += 1;
                    let inner = self.sequence(true)?;
                    self.pos += 1; // ')'
                    self.skip_ws();
                    if !matches!(self.peek(), Some('x' | 'X' | '×' | '*')) {
                        return self.fail("expected 'x<count>' after group");
                    }
                    self.pos += 1;
                    let Some(n) = self.count()? else {
                        return self.fail("expected repeat count");
                    };
                    items.push(Item::Group(inner.into_boxed_slice(), n));
                }
                Some(_) => {
                    let n = self.count()?.unwrap_or(1);
                    self.skip_ws();
                    let kind = match self.peek() {
                        Some('c' | 'C') => BlockKind::Lrca,
                        Some('t' | 'T') => BlockKind::TBlock,
                        Some(other) => return self.fail(format!("unexpected {other:?}")),
                        None => return self.fail("count without unit"),
                    };
                    self.pos += 1;
                    items.push(Item::Run(kind, n));
                }
            }
        }
        if items.is_empty() {
            return self.fail("empty block sequence");
        }
        Ok(items)
    }
}

fn expand_into(items: &[Item], out: &mut Vec<BlockKind>) {
    for item in items {
        match item {
            Item::Run(kind, n) => out.extend(core::iter::repeat_n(*kind, *n)),
            Item::Group(inner, n) => {
                for _ in 0..*n {
                    expand_into(inner, out);
                }
            }
        }
    }
}

fn write_items(items: &[Item], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    for (i, item) in items.iter().enumerate() {
        if i > 0 && matches!(items[i - 1], Item::Group(..)) {
            f.write_str(" ")?;
        }
        match item {
            Item::Run(BlockKind::Lrca, n) => write!(f, "{n}c")?,
            Item::Run(BlockKind::TBlock, n) => write!(f, "{n}t")?,
            Item::Group(inner, n) => {
                f.write_str("(")?;
                write_items(inner, f)?;
                write!(f, ")x{n}")?;
            }
        }
    }
    Ok(())
}

impl Architecture {
    pub fn parse(input: &str) -> Result<Self> {
        let mut p = Parser {
            input,
            chars: input.chars().collect(),
            pos: 0,
        };
        let items = p.sequence(false)?;
        Ok(Self { items })
    }

    /// Flat block sequence, executed left to right.
    pub fn blocks(&self) -> Vec<BlockKind> {
        let mut out = Vec::new();
        expand_into(&self.items, &mut out);
        out
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_items(&self.items, f)
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}
