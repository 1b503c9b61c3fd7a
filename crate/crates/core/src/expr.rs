//! Product-operator expressions such as `Iz(C1)+Iz(C2)+4*Iz(H)`.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := [sign] [number '*'] factor ('*' factor)*
//! factor := 'I' ('x'|'y'|'z') '(' name ')'
//! ```
//!
//! Whitespace is ignored. A `-` between terms negates the following term's
//! coefficient. Factors within a term are multiplied left to right, so
//! repeated factors on one spin are allowed.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::operator::{OperatorMatrix, Role};
use crate::spin::{self, Axis, SpinSystem};

#[derive(Debug, Clone, PartialEq)]
struct Factor {
    axis: Axis,
    spin: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Term {
    coefficient: f64,
    factors: Vec<Factor>,
}

struct Parser<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    system: &'a SpinSystem,
    text_len: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &str, system: &'a SpinSystem) -> Self {
        Self {
            chars: text.char_indices().filter(|(_, c)| !c.is_whitespace()).collect(),
            pos: 0,
            system,
            text_len: text.len(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn offset(&self) -> usize {
        self.chars.get(self.pos).map_or(self.text_len, |&(i, _)| i)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            position: self.offset(),
            message: message.into(),
        })
    }

    fn expect(&mut self, want: char) -> Result<()> {
        match self.peek() {
            Some(c) if c == want => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => self.error(format!("expected `{want}`, found `{c}`")),
            None => self.error(format!("expected `{want}`, found end of input")),
        }
    }

    fn parse(mut self) -> Result<Vec<Term>> {
        if self.chars.is_empty() {
            return self.error("empty expression");
        }
        let mut terms = vec![self.term(1.0)?];
        while let Some(c) = self.peek() {
            let sign = match c {
                '+' => 1.0,
                '-' => -1.0,
                other => return self.error(format!("expected `+` or `-`, found `{other}`")),
            };
            self.pos += 1;
            terms.push(self.term(sign)?);
        }
        Ok(terms)
    }

    fn term(&mut self, mut sign: f64) -> Result<Term> {
        while let Some(c @ ('+' | '-')) = self.peek() {
            if c == '-' {
                sign = -sign;
            }
            self.pos += 1;
        }
        let mut coefficient = sign;
        if matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == '.') {
            coefficient *= self.number()?;
            self.expect('*')?;
        }
        let mut factors = vec![self.factor()?];
        while self.peek() == Some('*') {
            self.pos += 1;
            factors.push(self.factor()?);
        }
        Ok(Term { coefficient, factors })
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        let mut text = String::new();
        let push_digits = |p: &mut Self, text: &mut String| {
            while let Some(c) = p.peek().filter(|c| c.is_ascii_digit()) {
                text.push(c);
                p.pos += 1;
            }
        };
        push_digits(self, &mut text);
        if self.peek() == Some('.') {
            text.push('.');
            self.pos += 1;
            push_digits(self, &mut text);
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            text.push('e');
            self.pos += 1;
            if let Some(c @ ('+' | '-')) = self.peek() {
                text.push(c);
                self.pos += 1;
            }
            push_digits(self, &mut text);
        }
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => {
                self.pos = start;
                self.error(format!("malformed number `{text}`"))
            }
        }
    }

    fn factor(&mut self) -> Result<Factor> {
        match self.peek() {
            Some('I') => self.pos += 1,
            Some(c) => return self.error(format!("expected operator `I`, found `{c}`")),
            None => return self.error("expected operator `I`, found end of input"),
        }
        let axis = match self.peek().and_then(Axis::from_char) {
            Some(a) => a,
            None => return self.error("expected axis x, y or z"),
        };
        self.pos += 1;
        self.expect('(')?;
        let name_start = self.pos;
        let mut name = String::new();
        while let Some(c) = self.peek().filter(|&c| c != ')') {
            if matches!(c, '(' | '*' | '+') {
                return self.error(format!("unexpected `{c}` in spin name"));
            }
            name.push(c);
            self.pos += 1;
        }
        if name.is_empty() {
            return self.error("empty spin name");
        }
        let spin = match self.system.spin_index(&name) {
            Some(i) => i,
            None => {
                self.pos = name_start;
                return Err(Error::UnknownSpin(name));
            }
        };
        self.expect(')')?;
        Ok(Factor { axis, spin })
    }
}

/// Parses an operator expression against the spins of `system`.
///
/// The result carries the `Observable` role; convert it with
/// [`OperatorMatrix::with_role`] when it must be a state.
pub fn parse_operator_expression(text: &str, system: &SpinSystem) -> Result<OperatorMatrix> {
    let terms = Parser::new(text, system).parse()?;
    let n = system.n_spins();
    let dim = system.dim();
    let mut total = linalg::zeros(dim);
    for term in terms {
        let mut product = linalg::identity(dim);
        for f in &term.factors {
            product *= spin::spin_matrix(f.axis, f.spin, n);
        }
        total += product * C64::new(term.coefficient, 0.0);
    }
    Ok(OperatorMatrix::from_trusted(total, Role::Observable))
}

/// Parses an expression that must describe a deviation state.
pub fn parse_state(text: &str, system: &SpinSystem) -> Result<OperatorMatrix> {
    parse_operator_expression(text, system)?.with_role(Role::State)
}
