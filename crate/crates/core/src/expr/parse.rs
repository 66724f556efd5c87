//! Infix expression parser.
//!
//! Accepts the textual grammar used everywhere an expression crosses a
//! boundary: `+ - * / ^` with conventional precedence, function calls such as
//! `sin(x)`, parenthesization, and decimal or scientific constants. Unary
//! minus binds looser than `^`, so `-x^2` parses as `-(x^2)`.

use super::{BinaryOp, Expr, ExprError, OperatorSet, UnaryOp};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

struct Lexer<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(input: &'a str) -> Self {
        Lexer {
            input: input.as_bytes(),
            pos: 0,
        }
    }

    fn tokenize(mut self) -> Result<Vec<(Token, usize)>, ExprError> {
        let mut out = Vec::new();
        while self.pos < self.input.len() {
            let start = self.pos;
            let c = self.input[self.pos];
            match c {
                b' ' | b'\t' | b'\r' | b'\n' => {
                    self.pos += 1;
                }
                b'+' => {
                    out.push((Token::Plus, start));
                    self.pos += 1;
                }
                b'-' => {
                    out.push((Token::Minus, start));
                    self.pos += 1;
                }
                b'*' => {
                    // Tolerate `**` as an exponent spelling.
                    if self.input.get(self.pos + 1) == Some(&b'*') {
                        out.push((Token::Caret, start));
                        self.pos += 2;
                    } else {
                        out.push((Token::Star, start));
                        self.pos += 1;
                    }
                }
                b'/' => {
                    out.push((Token::Slash, start));
                    self.pos += 1;
                }
                b'^' => {
                    out.push((Token::Caret, start));
                    self.pos += 1;
                }
                b'(' => {
                    out.push((Token::LParen, start));
                    self.pos += 1;
                }
                b')' => {
                    out.push((Token::RParen, start));
                    self.pos += 1;
                }
                b'0'..=b'9' | b'.' => {
                    let value = self.lex_number()?;
                    out.push((Token::Number(value), start));
                }
                _ if c.is_ascii_alphabetic() || c == b'_' => {
                    let end = self.scan(|c| c.is_ascii_alphanumeric() || c == b'_');
                    let text = std::str::from_utf8(&self.input[start..end])
                        .expect("identifier bytes are ascii");
                    out.push((Token::Ident(text.to_owned()), start));
                    self.pos = end;
                }
                _ => {
                    return Err(ExprError::Syntax {
                        position: start,
                        message: format!("unexpected character `{}`", c as char),
                    });
                }
            }
        }
        Ok(out)
    }

    fn scan(&self, pred: impl Fn(u8) -> bool) -> usize {
        let mut end = self.pos;
        while end < self.input.len() && pred(self.input[end]) {
            end += 1;
        }
        end
    }

    fn lex_number(&mut self) -> Result<f64, ExprError> {
        let start = self.pos;
        let mut end = self.scan(|c| c.is_ascii_digit());
        if end < self.input.len() && self.input[end] == b'.' {
            end += 1;
            while end < self.input.len() && self.input[end].is_ascii_digit() {
                end += 1;
            }
        }
        if end < self.input.len() && (self.input[end] == b'e' || self.input[end] == b'E') {
            let mut exp_end = end + 1;
            if exp_end < self.input.len()
                && (self.input[exp_end] == b'+' || self.input[exp_end] == b'-')
            {
                exp_end += 1;
            }
            if exp_end < self.input.len() && self.input[exp_end].is_ascii_digit() {
                end = exp_end;
                while end < self.input.len() && self.input[end].is_ascii_digit() {
                    end += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.input[start..end]).expect("digits are ascii");
        let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
            position: start,
            message: format!("invalid number `{text}`"),
        })?;
        if !value.is_finite() {
            return Err(ExprError::Syntax {
                position: start,
                message: format!("constant `{text}` overflows"),
            });
        }
        self.pos = end;
        Ok(value)
    }
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    ops: &'a OperatorSet,
    input_len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn position(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(_, p)| *p)
            .unwrap_or(self.input_len)
    }

    fn advance(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, token: Token, what: &str) -> Result<(), ExprError> {
        if self.peek() == Some(&token) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ExprError::Syntax {
                position: self.position(),
                message: format!("expected {what}"),
            })
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.parse_term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    lhs = Expr::binary(BinaryOp::Add, lhs, rhs);
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    lhs = Expr::binary(BinaryOp::Sub, lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.parse_unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    let rhs = self.parse_unary()?;
                    lhs = Expr::binary(BinaryOp::Mul, lhs, rhs);
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    let rhs = self.parse_unary()?;
                    lhs = Expr::binary(BinaryOp::Div, lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(&Token::Minus) {
            self.pos += 1;
            let inner = self.parse_unary()?;
            // `Expr::unary` folds negated literals into negative constants.
            return Ok(Expr::unary(UnaryOp::Neg, inner));
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Expr, ExprError> {
        let base = self.parse_primary()?;
        if self.peek() == Some(&Token::Caret) {
            self.pos += 1;
            // Right-associative; the exponent may carry its own sign.
            let exponent = self.parse_unary()?;
            return Ok(Expr::binary(BinaryOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn parse_primary(&mut self) -> Result<Expr, ExprError> {
        let position = self.position();
        match self.advance() {
            Some(Token::Number(v)) => Ok(Expr::constant(v)),
            Some(Token::Ident(name)) => {
                if self.peek() == Some(&Token::LParen) {
                    let op = UnaryOp::from_name(&name)
                        .filter(|op| *op == UnaryOp::Neg || self.ops.unary_ops().contains(op))
                        .ok_or_else(|| ExprError::UnknownSymbol(name.clone()))?;
                    self.pos += 1;
                    let arg = self.parse_expr()?;
                    self.expect(Token::RParen, "`)` to close function call")?;
                    Ok(Expr::unary(op, arg))
                } else if let Some(index) = self.ops.variable_index(&name) {
                    Ok(Expr::variable(index))
                } else {
                    Err(ExprError::UnknownSymbol(name))
                }
            }
            Some(Token::LParen) => {
                let inner = self.parse_expr()?;
                self.expect(Token::RParen, "`)`")?;
                Ok(inner)
            }
            Some(_) => Err(ExprError::Syntax {
                position,
                message: "expected a value".into(),
            }),
            None => Err(ExprError::Syntax {
                position,
                message: "unexpected end of input".into(),
            }),
        }
    }
}

/// Parses infix text into an expression tree over `ops`. Identifiers must be
/// declared variables or admitted unary function names.
pub fn parse(text: &str, ops: &OperatorSet) -> Result<Expr, ExprError> {
    let tokens = Lexer::new(text).tokenize()?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        ops,
        input_len: text.len(),
    };
    let expr = parser.parse_expr()?;
    if parser.pos != parser.tokens.len() {
        return Err(ExprError::Syntax {
            position: parser.position(),
            message: "trailing input after expression".into(),
        });
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{format, random_expr};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ops(names: &[&str]) -> OperatorSet {
        OperatorSet::default_for(names.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn parses_center_of_mass_form() {
        let ops = ops(&["m1", "r1", "m2", "r2"]);
        let e = parse("(m1*r1 + m2*r2)/(m1+m2)", &ops).unwrap();
        let expected = Expr::binary(
            BinaryOp::Div,
            Expr::binary(
                BinaryOp::Add,
                Expr::binary(BinaryOp::Mul, Expr::variable(0), Expr::variable(1)),
                Expr::binary(BinaryOp::Mul, Expr::variable(2), Expr::variable(3)),
            ),
            Expr::binary(BinaryOp::Add, Expr::variable(0), Expr::variable(2)),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn single_token_variable() {
        let ops = ops(&["x1"]);
        assert_eq!(parse("x1", &ops).unwrap(), Expr::variable(0));
    }

    #[test]
    fn undeclared_identifier_is_unknown_symbol() {
        let ops = ops(&["x1"]);
        match parse("sin(q9)", &ops) {
            Err(ExprError::UnknownSymbol(name)) => assert_eq!(name, "q9"),
            other => panic!("expected UnknownSymbol, got {other:?}"),
        }
    }

    #[test]
    fn unknown_function_is_unknown_symbol() {
        let ops = ops(&["x1"]);
        match parse("tan(x1)", &ops) {
            Err(ExprError::UnknownSymbol(name)) => assert_eq!(name, "tan"),
            other => panic!("expected UnknownSymbol, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_carries_position() {
        let ops = ops(&["x1"]);
        match parse("x1 + ", &ops) {
            Err(ExprError::Syntax { position, .. }) => assert_eq!(position, 5),
            other => panic!("expected Syntax error, got {other:?}"),
        }
        assert!(matches!(
            parse("x1 $ 2", &ops),
            Err(ExprError::Syntax { position: 3, .. })
        ));
    }

    #[test]
    fn scientific_notation_and_caret() {
        let ops = ops(&["r"]);
        let e = parse("1.9181636e-5 / r^2", &ops).unwrap();
        assert_eq!(
            e,
            Expr::binary(
                BinaryOp::Div,
                Expr::constant(1.9181636e-5),
                Expr::binary(BinaryOp::Pow, Expr::variable(0), Expr::constant(2.0)),
            )
        );
        // `**` is accepted as an exponent spelling.
        assert_eq!(parse("r**2", &ops).unwrap(), parse("r^2", &ops).unwrap());
    }

    #[test]
    fn unary_minus_binds_looser_than_pow() {
        let ops = ops(&["x"]);
        let e = parse("-x^2", &ops).unwrap();
        assert_eq!(
            e,
            Expr::unary(
                UnaryOp::Neg,
                Expr::binary(BinaryOp::Pow, Expr::variable(0), Expr::constant(2.0))
            )
        );
    }

    #[test]
    fn negative_literals_fold_to_constants() {
        let ops = ops(&["x"]);
        assert_eq!(parse("-2.5", &ops).unwrap(), Expr::constant(-2.5));
        assert_eq!(
            parse("x - -2.5", &ops).unwrap(),
            Expr::binary(BinaryOp::Sub, Expr::variable(0), Expr::constant(-2.5))
        );
    }

    #[test]
    fn round_trip_random_trees() {
        let ops = ops(&["x1", "x2", "x3", "x4"]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let e = random_expr(&ops, 6, &mut rng);
            let text = format(&e, &ops);
            let parsed = parse(&text, &ops).unwrap_or_else(|err| {
                panic!("failed to re-parse `{text}`: {err}");
            });
            assert_eq!(parsed, e, "round trip failed for `{text}`");
        }
    }
}
