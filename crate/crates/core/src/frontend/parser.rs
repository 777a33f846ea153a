//! Recursive-descent parser for the supported regex dialect.

use super::{ParseError, RegexAst};
use crate::alphabet::{self, Alphabet, CharClass};

/// Default cap on repetition bounds. Real rule sets use bounds in the
/// millions, but unfolding such automata needs memory budgets far beyond a
/// desk machine, so anything above the cap is a hard error. The cap is a
/// parameter of [`parse_in`].
pub const DEFAULT_BOUND_CAP: u64 = 1 << 20;

/// Parses a pattern over the byte alphabet with the default bound cap.
pub fn parse(pattern: &str) -> Result<RegexAst, ParseError> {
    parse_in(pattern, &Alphabet::BYTES, DEFAULT_BOUND_CAP)
}

/// Parses a pattern over an explicit alphabet with an explicit bound cap.
///
/// Anchors `^` and `$` are accepted at the extreme ends of the pattern and
/// ignored; acceptance is whole-word membership, which anchors already.
pub fn parse_in(
    pattern: &str,
    alphabet: &Alphabet,
    bound_cap: u64,
) -> Result<RegexAst, ParseError> {
    let mut bytes = pattern.as_bytes();
    if bytes.first() == Some(&b'^') {
        bytes = &bytes[1..];
    }
    if bytes.last() == Some(&b'$') && !ends_with_escape(bytes) {
        bytes = &bytes[..bytes.len() - 1];
    }
    let mut p = Parser {
        bytes,
        pos: 0,
        alphabet,
        bound_cap,
    };
    let ast = p.alternation()?;
    if p.pos != p.bytes.len() {
        return Err(p.syntax("unexpected character"));
    }
    Ok(ast)
}

/// True when the final byte is escaped, i.e. preceded by an odd number of
/// backslashes.
fn ends_with_escape(bytes: &[u8]) -> bool {
    let mut backslashes = 0;
    for &b in bytes[..bytes.len().saturating_sub(1)].iter().rev() {
        if b == b'\\' {
            backslashes += 1;
        } else {
            break;
        }
    }
    backslashes % 2 == 1
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    alphabet: &'a Alphabet,
    bound_cap: u64,
}

impl<'a> Parser<'a> {
    fn syntax(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn alternation(&mut self) -> Result<RegexAst, ParseError> {
        let mut ast = self.concatenation()?;
        while self.peek() == Some(b'|') {
            self.pos += 1;
            ast = RegexAst::union(ast, self.concatenation()?);
        }
        Ok(ast)
    }

    fn concatenation(&mut self) -> Result<RegexAst, ParseError> {
        let mut parts = Vec::new();
        while let Some(b) = self.peek() {
            if matches!(b, b'|' | b')') {
                break;
            }
            parts.push(self.repeat()?);
        }
        Ok(parts
            .into_iter()
            .reduce(RegexAst::concat)
            .unwrap_or(RegexAst::Epsilon))
    }

    fn repeat(&mut self) -> Result<RegexAst, ParseError> {
        let atom_pos = self.pos;
        let mut ast = self.atom()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    ast = RegexAst::star(ast);
                }
                Some(b'+') => {
                    self.pos += 1;
                    ast = RegexAst::concat(ast.clone(), RegexAst::star(ast));
                }
                Some(b'?') => {
                    self.pos += 1;
                    ast = match ast {
                        RegexAst::Class(c) => RegexAst::CountUpTo(c, 1),
                        other => RegexAst::union(RegexAst::Epsilon, other),
                    };
                }
                Some(b'{') => {
                    let (low, high) = self.bounds()?;
                    let RegexAst::Class(class) = ast else {
                        return Err(ParseError::NonMonadicCounting { pos: atom_pos });
                    };
                    ast = counted(class, low, high);
                }
                _ => break,
            }
        }
        Ok(ast)
    }

    fn atom(&mut self) -> Result<RegexAst, ParseError> {
        match self.peek() {
            None => Err(self.syntax("expected an atom")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.alternation()?;
                if self.peek() != Some(b')') {
                    return Err(self.syntax("unbalanced parenthesis"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(b'^') | Some(b'$') => {
                Err(self.syntax("anchors are only allowed at the pattern edges"))
            }
            Some(b'*') | Some(b'+') | Some(b'?') | Some(b'{') => {
                Err(self.syntax("repetition operator with nothing to repeat"))
            }
            _ => {
                let (class, next) = alphabet::parse_class_at(self.bytes, self.pos, self.alphabet)
                    .map_err(|e| ParseError::Syntax {
                    pos: e.pos,
                    msg: e.msg,
                })?;
                self.pos = next;
                Ok(RegexAst::Class(class))
            }
        }
    }

    /// Parses `{n}`, `{n,}`, or `{n,m}` starting at the opening brace.
    fn bounds(&mut self) -> Result<(u64, Option<u64>), ParseError> {
        debug_assert_eq!(self.peek(), Some(b'{'));
        self.pos += 1;
        let low = self.number()?;
        match self.peek() {
            Some(b'}') => {
                self.pos += 1;
                Ok((low, Some(low)))
            }
            Some(b',') => {
                self.pos += 1;
                if self.peek() == Some(b'}') {
                    self.pos += 1;
                    return Ok((low, None));
                }
                let high = self.number()?;
                if self.peek() != Some(b'}') {
                    return Err(self.syntax("expected '}'"));
                }
                self.pos += 1;
                if high < low {
                    return Err(self.syntax("repetition bounds out of order"));
                }
                Ok((low, Some(high)))
            }
            _ => Err(self.syntax("expected '}' or ',' in repetition bounds")),
        }
    }

    fn number(&mut self) -> Result<u64, ParseError> {
        let start = self.pos;
        let mut value: u64 = 0;
        while let Some(b @ b'0'..=b'9') = self.peek() {
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as u64))
                .filter(|&v| v <= self.bound_cap)
                .ok_or(ParseError::BoundTooLarge {
                    pos: start,
                    bound: u64::MAX,
                    cap: self.bound_cap,
                })?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.syntax("expected a number"));
        }
        if value > self.bound_cap {
            return Err(ParseError::BoundTooLarge {
                pos: start,
                bound: value,
                cap: self.bound_cap,
            });
        }
        Ok(value)
    }
}

/// Lowers `class{low,high}` to counting nodes; `high = None` means
/// unbounded.
fn counted(class: CharClass, low: u64, high: Option<u64>) -> RegexAst {
    match high {
        None => RegexAst::concat(
            RegexAst::CountExact(class.clone(), low),
            RegexAst::star(RegexAst::Class(class)),
        ),
        Some(high) if high == low => RegexAst::CountExact(class, low),
        Some(high) if low == 0 => RegexAst::CountUpTo(class, high),
        Some(high) => RegexAst::concat(
            RegexAst::CountExact(class.clone(), low),
            RegexAst::CountUpTo(class, high - low),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::Symbol;

    fn class(text: &str) -> CharClass {
        CharClass::parse(text, &Alphabet::BYTES).unwrap()
    }

    #[test]
    fn running_example_parses_to_counted_dot() {
        let ast = parse(".*a.{2}").unwrap();
        let dot = Alphabet::BYTES.full_class();
        assert_eq!(
            ast,
            RegexAst::concat(
                RegexAst::concat(
                    RegexAst::star(RegexAst::Class(dot.clone())),
                    RegexAst::Class(class("a")),
                ),
                RegexAst::CountExact(dot, 2),
            )
        );
    }

    #[test]
    fn general_range_is_split_per_rewriting_rule() {
        let ast = parse("[D-G]{43,53}").unwrap();
        assert_eq!(
            ast,
            RegexAst::concat(
                RegexAst::CountExact(class("[D-G]"), 43),
                RegexAst::CountUpTo(class("[D-G]"), 10),
            )
        );
    }

    #[test]
    fn counting_a_group_is_rejected() {
        assert_eq!(
            parse("(ab){3}"),
            Err(ParseError::NonMonadicCounting { pos: 0 })
        );
        // A parenthesised class is still a class.
        assert_eq!(
            parse("([ab]){3}").unwrap(),
            RegexAst::CountExact(class("[ab]"), 3)
        );
    }

    #[test]
    fn optional_and_open_ranges() {
        assert_eq!(parse("a?").unwrap(), RegexAst::CountUpTo(class("a"), 1));
        assert_eq!(parse("a{0,3}").unwrap(), RegexAst::CountUpTo(class("a"), 3));
        assert_eq!(
            parse("a{2,}").unwrap(),
            RegexAst::concat(
                RegexAst::CountExact(class("a"), 2),
                RegexAst::star(RegexAst::Class(class("a"))),
            )
        );
        assert_eq!(
            parse("a+").unwrap(),
            RegexAst::concat(
                RegexAst::Class(class("a")),
                RegexAst::star(RegexAst::Class(class("a"))),
            )
        );
        assert_eq!(
            parse("(ab)?").unwrap(),
            RegexAst::union(
                RegexAst::Epsilon,
                RegexAst::concat(RegexAst::Class(class("a")), RegexAst::Class(class("b"))),
            )
        );
    }

    #[test]
    fn anchors_allowed_at_edges_only() {
        assert_eq!(parse("^ab$").unwrap(), parse("ab").unwrap());
        assert!(matches!(
            parse("a^b"),
            Err(ParseError::Syntax { pos: 1, .. })
        ));
        assert!(matches!(parse("a$b"), Err(ParseError::Syntax { .. })));
        // An escaped dollar at the end is a literal.
        assert_eq!(
            parse("a\\$").unwrap(),
            RegexAst::concat(RegexAst::Class(class("a")), RegexAst::Class(class("\\$")))
        );
    }

    #[test]
    fn escapes_and_predefined_classes() {
        assert_eq!(parse("\\d").unwrap(), RegexAst::Class(class("[0-9]")));
        assert_eq!(parse("\\x41").unwrap(), RegexAst::Class(class("A")));
        let ast = parse("[\\w-]").unwrap();
        let RegexAst::Class(c) = ast else {
            panic!("expected class")
        };
        assert!(c.contains(Symbol(b'-' as u32)));
        assert!(c.contains(Symbol(b'_' as u32)));
    }

    #[test]
    fn bound_cap_is_enforced() {
        assert!(matches!(
            parse("a{2000000}"),
            Err(ParseError::BoundTooLarge { .. })
        ));
        assert!(parse_in("a{böund}", &Alphabet::BYTES, 10).is_err());
        assert!(parse_in("a{9}", &Alphabet::BYTES, 10).is_ok());
        assert!(matches!(
            parse_in("a{11}", &Alphabet::BYTES, 10),
            Err(ParseError::BoundTooLarge { .. })
        ));
    }

    #[test]
    fn empty_pattern_and_empty_branches() {
        assert_eq!(parse("").unwrap(), RegexAst::Epsilon);
        assert_eq!(
            parse("a|").unwrap(),
            RegexAst::union(RegexAst::Class(class("a")), RegexAst::Epsilon)
        );
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let Err(ParseError::Syntax { pos, .. }) = parse("ab)") else {
            panic!("expected syntax error")
        };
        assert_eq!(pos, 2);
        assert!(parse("(a").is_err());
        assert!(parse("*a").is_err());
        assert!(parse("[a").is_err());
    }
}
