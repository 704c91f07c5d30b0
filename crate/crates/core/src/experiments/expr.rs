//! Arithmetic target expressions over named input variables.
//!
//! Grammar (lowest to highest precedence, all binary operators left
//! associative):
//!
//! ```text
//! sum     := product (("+" | "-") product)*
//! product := unary ("*" unary)*
//! unary   := "-" unary | power
//! power   := atom ("^" integer)*
//! atom    := number | identifier | "(" sum ")"
//! ```
//!
//! so `-x^2` is `-(x^2)` and `2*-x` is allowed. Exponents must be
//! non-negative integer literals.

use std::fmt;

use thiserror::Error;

/// Variable names of the four-input experiments, in column order.
pub const DEFAULT_VARIABLES: [&str; 4] = ["x1", "x2", "y1", "y2"];

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown variable '{name}' at position {position}; valid names: {}", valid.join(", "))]
    UnknownVariable {
        name: String,
        position: usize,
        valid: Vec<String>,
    },
    #[error("exponent at position {position} must be a non-negative integer")]
    NonIntegerExponent { position: usize },
    #[error("point has {found} coordinates, expression has {expected} variables")]
    Dimension { expected: usize, found: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExprNode {
    Const(f64),
    Var(usize),
    Add(Box<ExprNode>, Box<ExprNode>),
    Mul(Box<ExprNode>, Box<ExprNode>),
    Pow(Box<ExprNode>, u32),
    Neg(Box<ExprNode>),
}

/// A parsed expression together with the variable names it ranges over.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprTree {
    root: ExprNode,
    variables: Vec<String>,
}

impl ExprTree {
    pub fn root(&self) -> &ExprNode {
        &self.root
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn dim(&self) -> usize {
        self.variables.len()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    /// Multiplies the expression by a constant.
    pub fn scaled(&self, factor: f64) -> ExprTree {
        ExprTree {
            root: ExprNode::Mul(Box::new(ExprNode::Const(factor)), Box::new(self.root.clone())),
            variables: self.variables.clone(),
        }
    }

    /// Value at `point`; the caller guarantees `point.len() == self.dim()`.
    pub fn eval_unchecked(&self, point: &[f64]) -> f64 {
        eval(&self.root, point)
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        self.check_dim(point)?;
        Ok(self.eval_unchecked(point))
    }

    fn check_dim(&self, point: &[f64]) -> Result<(), ExprError> {
        if point.len() != self.dim() {
            return Err(ExprError::Dimension {
                expected: self.dim(),
                found: point.len(),
            });
        }
        Ok(())
    }
}

fn eval(node: &ExprNode, point: &[f64]) -> f64 {
    match node {
        ExprNode::Const(c) => *c,
        ExprNode::Var(i) => point[*i],
        ExprNode::Add(a, b) => eval(a, point) + eval(b, point),
        ExprNode::Mul(a, b) => eval(a, point) * eval(b, point),
        ExprNode::Pow(a, k) => eval(a, point).powi(*k as i32),
        ExprNode::Neg(a) => -eval(a, point),
    }
}

/// Value and gradient by the sum, product and power rules.
fn value_grad(node: &ExprNode, point: &[f64]) -> (f64, Vec<f64>) {
    match node {
        ExprNode::Const(c) => (*c, vec![0.0; point.len()]),
        ExprNode::Var(i) => {
            let mut g = vec![0.0; point.len()];
            g[*i] = 1.0;
            (point[*i], g)
        }
        ExprNode::Add(a, b) => {
            let (va, ga) = value_grad(a, point);
            let (vb, gb) = value_grad(b, point);
            (va + vb, ga.iter().zip(&gb).map(|(x, y)| x + y).collect())
        }
        ExprNode::Mul(a, b) => {
            let (va, ga) = value_grad(a, point);
            let (vb, gb) = value_grad(b, point);
            (va * vb, ga.iter().zip(&gb).map(|(x, y)| x * vb + va * y).collect())
        }
        ExprNode::Pow(a, k) => {
            let (va, ga) = value_grad(a, point);
            if *k == 0 {
                return (1.0, vec![0.0; point.len()]);
            }
            let outer = *k as f64 * va.powi(*k as i32 - 1);
            (va.powi(*k as i32), ga.iter().map(|g| outer * g).collect())
        }
        ExprNode::Neg(a) => {
            let (va, ga) = value_grad(a, point);
            (-va, ga.iter().map(|g| -g).collect())
        }
    }
}

/// Exact gradient of `expr` at `point`.
pub fn expr_grad(expr: &ExprTree, point: &[f64]) -> Result<Vec<f64>, ExprError> {
    expr.check_dim(point)?;
    Ok(value_grad(&expr.root, point).1)
}

/// Parses `text` over [`DEFAULT_VARIABLES`].
pub fn parse_expr(text: &str) -> Result<ExprTree, ExprError> {
    parse_expr_with(text, &DEFAULT_VARIABLES)
}

/// Parses `text`; identifiers must be among `variables`, whose order fixes
/// the coordinate order of evaluation points.
pub fn parse_expr_with(text: &str, variables: &[&str]) -> Result<ExprTree, ExprError> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(ExprError::Empty);
    }
    let mut parser = Parser {
        tokens,
        at: 0,
        variables,
        end: text.len(),
    };
    let root = parser.sum()?;
    if let Some(tok) = parser.peek() {
        return Err(ExprError::Syntax {
            position: tok.position,
            message: format!("unexpected {}", tok.kind),
        });
    }
    Ok(ExprTree {
        root,
        variables: variables.iter().map(|v| v.to_string()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
enum TokenKind {
    Number(f64, bool),
    Ident(String),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Number(v, _) => write!(f, "number {v}"),
            TokenKind::Ident(s) => write!(f, "identifier '{s}'"),
            TokenKind::Plus => f.write_str("'+'"),
            TokenKind::Minus => f.write_str("'-'"),
            TokenKind::Star => f.write_str("'*'"),
            TokenKind::Caret => f.write_str("'^'"),
            TokenKind::LParen => f.write_str("'('"),
            TokenKind::RParen => f.write_str("')'"),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    kind: TokenKind,
    position: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let simple = match c {
            b'+' => Some(TokenKind::Plus),
            b'-' => Some(TokenKind::Minus),
            b'*' => Some(TokenKind::Star),
            b'^' => Some(TokenKind::Caret),
            b'(' => Some(TokenKind::LParen),
            b')' => Some(TokenKind::RParen),
            _ => None,
        };
        if let Some(kind) = simple {
            out.push(Token { kind, position: start });
            i += 1;
        } else if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lexeme = &text[start..i];
            let value: f64 = lexeme.parse().map_err(|_| ExprError::Syntax {
                position: start,
                message: format!("malformed number '{lexeme}'"),
            })?;
            let integral = lexeme.bytes().all(|b| b.is_ascii_digit());
            out.push(Token {
                kind: TokenKind::Number(value, integral),
                position: start,
            });
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokenKind::Ident(text[start..i].to_string()),
                position: start,
            });
        } else {
            let ch = text[start..].chars().next().unwrap_or('?');
            return Err(ExprError::Syntax {
                position: start,
                message: format!("unexpected character '{ch}'"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    at: usize,
    variables: &'a [&'a str],
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.at)
    }

    fn next(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.at).cloned();
        self.at += 1;
        tok
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek().map(|t| &t.kind) == Some(kind) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> Result<ExprNode, ExprError> {
        let mut node = self.product()?;
        loop {
            if self.eat(&TokenKind::Plus) {
                node = ExprNode::Add(Box::new(node), Box::new(self.product()?));
            } else if self.eat(&TokenKind::Minus) {
                let rhs = ExprNode::Neg(Box::new(self.product()?));
                node = ExprNode::Add(Box::new(node), Box::new(rhs));
            } else {
                return Ok(node);
            }
        }
    }

    fn product(&mut self) -> Result<ExprNode, ExprError> {
        let mut node = self.unary()?;
        while self.eat(&TokenKind::Star) {
            node = ExprNode::Mul(Box::new(node), Box::new(self.unary()?));
        }
        Ok(node)
    }

    fn unary(&mut self) -> Result<ExprNode, ExprError> {
        if self.eat(&TokenKind::Minus) {
            return Ok(ExprNode::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<ExprNode, ExprError> {
        let mut node = self.atom()?;
        while self.eat(&TokenKind::Caret) {
            let position = self.peek().map_or(self.end, |t| t.position);
            match self.next().map(|t| t.kind) {
                Some(TokenKind::Number(v, true)) if v <= u32::MAX as f64 => {
                    node = ExprNode::Pow(Box::new(node), v as u32);
                }
                Some(TokenKind::Number(..)) | Some(TokenKind::Minus) | Some(TokenKind::Ident(_)) => {
                    return Err(ExprError::NonIntegerExponent { position })
                }
                Some(other) => {
                    return Err(ExprError::Syntax {
                        position,
                        message: format!("expected an integer exponent, found {other}"),
                    })
                }
                None => {
                    return Err(ExprError::Syntax {
                        position,
                        message: "expected an integer exponent, found end of input".into(),
                    })
                }
            }
        }
        Ok(node)
    }

    fn atom(&mut self) -> Result<ExprNode, ExprError> {
        let position = self.peek().map_or(self.end, |t| t.position);
        match self.next().map(|t| t.kind) {
            Some(TokenKind::Number(v, _)) => Ok(ExprNode::Const(v)),
            Some(TokenKind::Ident(name)) => match self.variables.iter().position(|v| *v == name) {
                Some(i) => Ok(ExprNode::Var(i)),
                None => Err(ExprError::UnknownVariable {
                    name,
                    position,
                    valid: self.variables.iter().map(|v| v.to_string()).collect(),
                }),
            },
            Some(TokenKind::LParen) => {
                let inner = self.sum()?;
                if !self.eat(&TokenKind::RParen) {
                    let position = self.peek().map_or(self.end, |t| t.position);
                    return Err(ExprError::Syntax {
                        position,
                        message: "expected ')'".into(),
                    });
                }
                Ok(inner)
            }
            Some(other) => Err(ExprError::Syntax {
                position,
                message: format!("unexpected {other}"),
            }),
            None => Err(ExprError::Syntax {
                position,
                message: "unexpected end of input".into(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_evaluated_values() {
        let z = parse_expr("x1^2*x2 + y1*y2^2").unwrap();
        // 1^2 * 2 + 3 * 4^2 = 2 + 48
        assert_eq!(z.eval(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 50.0);
        let zp = parse_expr("x1*y1*y2 + x1*x2*y2").unwrap();
        // 2*1*3 + 2*1*3
        assert_eq!(zp.eval(&[2.0, 1.0, 1.0, 3.0]).unwrap(), 12.0);
        assert_eq!(parse_expr("x1").unwrap().eval(&[7.0, 0.0, 0.0, 0.0]).unwrap(), 7.0);
    }

    #[test]
    fn precedence_and_associativity() {
        let at = |s: &str| parse_expr(s).unwrap().eval(&[2.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(at("-x1^2"), -4.0);
        assert_eq!(at("(-x1)^2"), 4.0);
        assert_eq!(at("x1 - x2 - y1"), -6.0);
        assert_eq!(at("x1^2^3"), 64.0);
        assert_eq!(at("2*-x2"), -6.0);
        assert_eq!(at("x1 + x2 * y1"), 17.0);
        assert_eq!(at("(x1 + x2) * y1"), 25.0);
        assert_eq!(at("1.5e1 - x1^0"), 14.0);
    }

    #[test]
    fn syntax_errors_carry_positions() {
        assert_eq!(
            parse_expr("x1 + * x2"),
            Err(ExprError::Syntax {
                position: 5,
                message: "unexpected '*'".into()
            })
        );
        assert!(matches!(parse_expr("(x1 + x2"), Err(ExprError::Syntax { position: 8, .. })));
        assert!(matches!(parse_expr("x1 $ x2"), Err(ExprError::Syntax { position: 3, .. })));
        assert!(matches!(parse_expr("x1 x2"), Err(ExprError::Syntax { position: 3, .. })));
        assert_eq!(parse_expr("   "), Err(ExprError::Empty));
    }

    #[test]
    fn unknown_variables_list_valid_names() {
        match parse_expr("x1 + q") {
            Err(ExprError::UnknownVariable { name, position, valid }) => {
                assert_eq!(name, "q");
                assert_eq!(position, 5);
                assert_eq!(valid, vec!["x1", "x2", "y1", "y2"]);
            }
            other => panic!("{other:?}"),
        }
        let msg = parse_expr("q").unwrap_err().to_string();
        assert!(msg.contains("x1, x2, y1, y2"), "{msg}");
    }

    #[test]
    fn exponents_must_be_non_negative_integers() {
        for bad in ["x1^1.5", "x1^-2", "x1^x2"] {
            assert!(
                matches!(parse_expr(bad), Err(ExprError::NonIntegerExponent { position: 3 })),
                "{bad}"
            );
        }
        assert!(matches!(parse_expr("x1^"), Err(ExprError::Syntax { .. })));
    }

    #[test]
    fn hand_derived_gradients() {
        let z = parse_expr("x1^2*x2 + y1*y2^2").unwrap();
        // (2 x1 x2, x1^2, y2^2, 2 y1 y2) at (1,1,1,1)
        assert_eq!(expr_grad(&z, &[1.0; 4]).unwrap(), vec![2.0, 1.0, 1.0, 2.0]);
        let c = parse_expr("3 + 4*2").unwrap();
        assert_eq!(expr_grad(&c, &[0.3, -1.0, 2.0, 5.0]).unwrap(), vec![0.0; 4]);
        assert!(matches!(expr_grad(&z, &[1.0]), Err(ExprError::Dimension { .. })));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let exprs = [
            "x1^2*x2 + y1*y2^2",
            "x1*y1*y2 + x1*x2*y2",
            "(x1 - 2*y2)^3 * -x2 + y1^4",
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for text in exprs {
            let e = parse_expr(text).unwrap();
            for _ in 0..100 {
                let p: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let g = expr_grad(&e, &p).unwrap();
                for i in 0..4 {
                    let mut a = p.clone();
                    let mut b = p.clone();
                    a[i] += h;
                    b[i] -= h;
                    let fd = (e.eval(&a).unwrap() - e.eval(&b).unwrap()) / (2.0 * h);
                    let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3);
                    assert!(rel < 1e-7, "{text} d{i}: {} vs {fd}", g[i]);
                }
            }
        }
    }

    #[test]
    fn custom_variable_sets() {
        let e = parse_expr_with("a*b - c", &["a", "b", "c"]).unwrap();
        assert_eq!(e.eval(&[2.0, 3.0, 1.0]).unwrap(), 5.0);
        assert_eq!(e.variable_index("c"), Some(2));
        assert_eq!(e.scaled(3.0).eval(&[2.0, 3.0, 1.0]).unwrap(), 15.0);
    }
}
