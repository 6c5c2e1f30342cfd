//! Line-oriented text format helpers shared by the serializers.
//!
//! All interchange files are human-diffable text. Numbers are printed with 17
//! significant digits so every `f64` round-trips exactly; infinities are
//! spelled `inf` / `-inf`. Parsing is locale-independent (decimal point only).

use crate::error::{Error, Result};

/// Formats a float for interchange files.
pub fn fmt_f(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Parses a float, accepting the `inf`/`-inf`/`+inf` spellings.
pub fn parse_f(tok: &str, line: usize) -> Result<f64> {
    match tok {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok.parse::<f64>().map_err(|_| Error::Parse {
            line,
            msg: format!("expected a number, got {tok:?}"),
        }),
    }
}

pub fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>().map_err(|_| Error::Parse {
        line,
        msg: format!("expected an index, got {tok:?}"),
    })
}

/// Cursor over non-empty, non-comment lines with 1-based line numbers.
pub struct LineScanner<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> LineScanner<'a> {
    pub fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        LineScanner { lines, pos: 0 }
    }

    pub fn peek(&self) -> Option<(usize, &'a str)> {
        self.lines.get(self.pos).copied()
    }

    pub fn next_line(&mut self) -> Option<(usize, &'a str)> {
        let item = self.lines.get(self.pos).copied();
        if item.is_some() {
            self.pos += 1;
        }
        item
    }

    /// Line number to report when input ends unexpectedly.
    pub fn eof_line(&self) -> usize {
        self.lines.last().map_or(1, |(n, _)| n + 1)
    }

    pub fn expect(&mut self, keyword: &str) -> Result<usize> {
        match self.next_line() {
            Some((n, l)) if l == keyword => Ok(n),
            Some((n, l)) => Err(Error::Parse {
                line: n,
                msg: format!("expected {keyword:?}, got {l:?}"),
            }),
            None => Err(Error::Parse {
                line: self.eof_line(),
                msg: format!("expected {keyword:?}, got end of input"),
            }),
        }
    }

    pub fn is_done(&self) -> bool {
        self.pos >= self.lines.len()
    }
}
