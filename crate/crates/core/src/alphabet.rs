//! Symbolic character classes over a finite alphabet.
//!
//! All symbol guards in the toolkit are [`CharClass`] values: canonical,
//! ordered lists of disjoint inclusive code ranges. Canonical form makes
//! structural equality coincide with set equality, which the determinisers
//! rely on when they hash and compare guards. The alphabet size is a
//! construction-time parameter (bytes by default) so that tests can run
//! brute-force oracles over tiny alphabets like `{a,b}`.

use std::fmt;

/// A single input symbol, identified by its code in `[0, alphabet_size)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Symbol(pub u32);

impl Symbol {
    pub fn code(self) -> u32 {
        self.0
    }
}

impl From<u8> for Symbol {
    fn from(b: u8) -> Self {
        Symbol(b as u32)
    }
}

/// A word is a finite sequence of symbols.
pub type Word = Vec<Symbol>;

/// Converts a byte string to a word over the byte alphabet.
pub fn word_from_bytes(bytes: &[u8]) -> Word {
    bytes.iter().map(|&b| Symbol::from(b)).collect()
}

/// The finite alphabet `Σ = {0, ..., size-1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alphabet {
    size: u32,
}

impl Alphabet {
    /// The byte alphabet, `Σ = {0, ..., 255}`.
    pub const BYTES: Alphabet = Alphabet { size: 256 };

    pub fn new(size: u32) -> Self {
        assert!(size > 0, "alphabet must be non-empty");
        Alphabet { size }
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn contains(&self, sym: Symbol) -> bool {
        sym.0 < self.size
    }

    /// The class containing every symbol of the alphabet.
    pub fn full_class(&self) -> CharClass {
        CharClass {
            ranges: vec![(0, self.size - 1)],
        }
    }

    /// Symbols not in `class`.
    pub fn complement(&self, class: &CharClass) -> CharClass {
        let mut ranges = Vec::new();
        let mut next = 0u32;
        for &(lo, hi) in &class.ranges {
            if lo > next {
                ranges.push((next, lo - 1));
            }
            next = hi + 1;
        }
        if next < self.size {
            ranges.push((next, self.size - 1));
        }
        CharClass { ranges }
    }

    /// Minterms of a set of classes: all non-empty conjunctions choosing each
    /// input class positively or negatively. The result partitions the
    /// alphabet, and every input class is a union of the minterms it contains.
    ///
    /// Computed by iterative refinement (splitting existing blocks with each
    /// new class) rather than by enumerating sign combinations, so the cost is
    /// polynomial in the size of the output.
    pub fn minterms(&self, classes: &[CharClass]) -> Vec<CharClass> {
        let mut blocks = vec![self.full_class()];
        for class in classes {
            let mut refined = Vec::with_capacity(blocks.len() + 1);
            for block in &blocks {
                let inside = block.intersect(class);
                let outside = block.subtract(class);
                if !inside.is_empty() {
                    refined.push(inside);
                }
                if !outside.is_empty() {
                    refined.push(outside);
                }
            }
            blocks = refined;
        }
        blocks.sort_by_key(|b| b.min_symbol().map(|s| s.0));
        blocks
    }
}

/// A set of symbols, stored as sorted, disjoint, non-adjacent inclusive code
/// ranges. Two classes with the same members are structurally equal.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct CharClass {
    ranges: Vec<(u32, u32)>,
}

impl CharClass {
    pub fn empty() -> Self {
        CharClass { ranges: Vec::new() }
    }

    pub fn singleton(sym: Symbol) -> Self {
        CharClass {
            ranges: vec![(sym.0, sym.0)],
        }
    }

    /// Builds a class from arbitrary inclusive ranges, normalising to
    /// canonical form.
    pub fn from_ranges(ranges: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut ranges: Vec<(u32, u32)> = ranges.into_iter().filter(|(lo, hi)| lo <= hi).collect();
        ranges.sort_unstable();
        let mut canonical: Vec<(u32, u32)> = Vec::with_capacity(ranges.len());
        for (lo, hi) in ranges {
            match canonical.last_mut() {
                // Merge overlapping or adjacent ranges.
                Some(last) if lo <= last.1.saturating_add(1) => last.1 = last.1.max(hi),
                _ => canonical.push((lo, hi)),
            }
        }
        CharClass { ranges: canonical }
    }

    pub fn ranges(&self) -> &[(u32, u32)] {
        &self.ranges
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn is_full(&self, alphabet: &Alphabet) -> bool {
        self.ranges == [(0, alphabet.size - 1)]
    }

    pub fn contains(&self, sym: Symbol) -> bool {
        let c = sym.0;
        self.ranges
            .binary_search_by(|&(lo, hi)| {
                if c < lo {
                    std::cmp::Ordering::Greater
                } else if c > hi {
                    std::cmp::Ordering::Less
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .is_ok()
    }

    /// Number of symbols in the class.
    pub fn len(&self) -> u64 {
        self.ranges
            .iter()
            .map(|&(lo, hi)| (hi - lo + 1) as u64)
            .sum()
    }

    pub fn min_symbol(&self) -> Option<Symbol> {
        self.ranges.first().map(|&(lo, _)| Symbol(lo))
    }

    pub fn iter(&self) -> impl Iterator<Item = Symbol> + '_ {
        self.ranges
            .iter()
            .flat_map(|&(lo, hi)| (lo..=hi).map(Symbol))
    }

    pub fn union(&self, other: &CharClass) -> CharClass {
        CharClass::from_ranges(self.ranges.iter().chain(other.ranges.iter()).copied())
    }

    pub fn intersect(&self, other: &CharClass) -> CharClass {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.ranges.len() && j < other.ranges.len() {
            let (alo, ahi) = self.ranges[i];
            let (blo, bhi) = other.ranges[j];
            let lo = alo.max(blo);
            let hi = ahi.min(bhi);
            if lo <= hi {
                out.push((lo, hi));
            }
            if ahi < bhi {
                i += 1;
            } else {
                j += 1;
            }
        }
        // Intersection of canonical lists is canonical already.
        CharClass { ranges: out }
    }

    /// Symbols in `self` but not in `other`.
    pub fn subtract(&self, other: &CharClass) -> CharClass {
        let mut out = Vec::new();
        let mut j = 0;
        for &(lo, hi) in &self.ranges {
            let mut cur = lo;
            while j < other.ranges.len() && other.ranges[j].1 < cur {
                j += 1;
            }
            let mut k = j;
            while k < other.ranges.len() && other.ranges[k].0 <= hi {
                let (blo, bhi) = other.ranges[k];
                if blo > cur {
                    out.push((cur, blo - 1));
                }
                cur = bhi.saturating_add(1);
                if cur > hi {
                    break;
                }
                k += 1;
            }
            if cur <= hi {
                out.push((cur, hi));
            }
        }
        CharClass { ranges: out }
    }

    pub fn intersects(&self, other: &CharClass) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.ranges.len() && j < other.ranges.len() {
            let (alo, ahi) = self.ranges[i];
            let (blo, bhi) = other.ranges[j];
            if alo.max(blo) <= ahi.min(bhi) {
                return true;
            }
            if ahi < bhi {
                i += 1;
            } else {
                j += 1;
            }
        }
        false
    }

    /// True when every symbol of `self` is in `other`.
    pub fn is_subset_of(&self, other: &CharClass) -> bool {
        self.subtract(other).is_empty()
    }

    /// Renders the class in the regex-style text syntax used in JSON files
    /// and CLI output: `.` for the full alphabet, a bare character for
    /// singletons, `[...]`/`[^...]` otherwise, `[]` for the empty class.
    pub fn render(&self, alphabet: &Alphabet) -> String {
        if self.is_full(alphabet) {
            return ".".to_string();
        }
        if self.is_empty() {
            return "[]".to_string();
        }
        if self.len() == 1 {
            let code = self.ranges[0].0;
            if let Some(text) = render_bare_symbol(code) {
                return text;
            }
        }
        let negated = alphabet.complement(self);
        if negated.ranges.len() < self.ranges.len() {
            format!("[^{}]", render_body(&negated))
        } else {
            format!("[{}]", render_body(self))
        }
    }

    /// Parses the standalone class syntax accepted by [`CharClass::render`].
    pub fn parse(text: &str, alphabet: &Alphabet) -> Result<CharClass, ClassSyntaxError> {
        let bytes = text.as_bytes();
        let (class, consumed) = parse_class_at(bytes, 0, alphabet)?;
        if consumed != bytes.len() {
            return Err(ClassSyntaxError {
                pos: consumed,
                msg: "trailing input after character class".into(),
            });
        }
        Ok(class)
    }
}

impl fmt::Display for CharClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render(&Alphabet::BYTES))
    }
}

/// Error raised when parsing the textual class syntax.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("character class syntax error at byte {pos}: {msg}")]
pub struct ClassSyntaxError {
    pub pos: usize,
    pub msg: String,
}

fn err(pos: usize, msg: impl Into<String>) -> ClassSyntaxError {
    ClassSyntaxError {
        pos,
        msg: msg.into(),
    }
}

fn render_bare_symbol(code: u32) -> Option<String> {
    match code {
        b if b == b'\n' as u32 => Some("\\n".into()),
        b if b == b'\t' as u32 => Some("\\t".into()),
        b if b == b'\r' as u32 => Some("\\r".into()),
        0x20..=0x7e => {
            let ch = code as u8 as char;
            if "[](){}.*+?|^$\\".contains(ch) {
                Some(format!("\\{ch}"))
            } else {
                Some(ch.to_string())
            }
        }
        0..=0xff => Some(format!("\\x{code:02X}")),
        _ => None,
    }
}

fn render_body_symbol(code: u32) -> String {
    match code {
        b if b == b'\n' as u32 => "\\n".into(),
        b if b == b'\t' as u32 => "\\t".into(),
        b if b == b'\r' as u32 => "\\r".into(),
        0x20..=0x7e => {
            let ch = code as u8 as char;
            if "[]^-\\".contains(ch) {
                format!("\\{ch}")
            } else {
                ch.to_string()
            }
        }
        _ => format!("\\x{code:02X}"),
    }
}

fn render_body(class: &CharClass) -> String {
    let mut out = String::new();
    for &(lo, hi) in &class.ranges {
        if lo == hi {
            out.push_str(&render_body_symbol(lo));
        } else {
            out.push_str(&render_body_symbol(lo));
            out.push('-');
            out.push_str(&render_body_symbol(hi));
        }
    }
    out
}

/// A decoded escape: either a single symbol code or a predefined class.
pub(crate) enum Escape {
    Code(u32),
    Class(CharClass),
}

/// Decodes the escape following a backslash at `pos` (which indexes the
/// backslash itself). Returns the escape and the index just past it.
pub(crate) fn parse_escape(
    bytes: &[u8],
    pos: usize,
    alphabet: &Alphabet,
) -> Result<(Escape, usize), ClassSyntaxError> {
    let Some(&b) = bytes.get(pos + 1) else {
        return Err(err(pos, "dangling escape"));
    };
    let code = |c: u8| Ok((Escape::Code(c as u32), pos + 2));
    match b {
        b'n' => code(b'\n'),
        b't' => code(b'\t'),
        b'r' => code(b'\r'),
        b'0' => code(0),
        b'x' => {
            let hex = bytes
                .get(pos + 2..pos + 4)
                .ok_or_else(|| err(pos, "\\x expects two hex digits"))?;
            let text = std::str::from_utf8(hex).map_err(|_| err(pos, "invalid hex digits"))?;
            let value =
                u32::from_str_radix(text, 16).map_err(|_| err(pos, "invalid hex digits"))?;
            if value >= alphabet.size() {
                return Err(err(pos, "escape outside the alphabet"));
            }
            Ok((Escape::Code(value), pos + 4))
        }
        b'd' | b'D' | b'w' | b'W' | b's' | b'S' => {
            let base = match b.to_ascii_lowercase() {
                b'd' => CharClass::from_ranges([(b'0' as u32, b'9' as u32)]),
                b's' => CharClass::from_ranges(
                    [b' ', b'\t', b'\n', b'\r', 0x0b, 0x0c].map(|c| (c as u32, c as u32)),
                ),
                _ => CharClass::from_ranges([
                    (b'0' as u32, b'9' as u32),
                    (b'A' as u32, b'Z' as u32),
                    (b'_' as u32, b'_' as u32),
                    (b'a' as u32, b'z' as u32),
                ]),
            };
            let base = clip(&base, alphabet);
            let class = if b.is_ascii_uppercase() {
                alphabet.complement(&base)
            } else {
                base
            };
            Ok((Escape::Class(class), pos + 2))
        }
        _ if !b.is_ascii_alphanumeric() => code(b),
        _ => Err(err(pos, format!("unknown escape \\{}", b as char))),
    }
}

fn clip(class: &CharClass, alphabet: &Alphabet) -> CharClass {
    class.intersect(&alphabet.full_class())
}

/// Parses a class at `pos`: `.`, `[...]`, `[^...]`, a bare character, or an
/// escape. Returns the class and the index just past it.
pub(crate) fn parse_class_at(
    bytes: &[u8],
    pos: usize,
    alphabet: &Alphabet,
) -> Result<(CharClass, usize), ClassSyntaxError> {
    match bytes.get(pos) {
        None => Err(err(pos, "expected a character class")),
        Some(b'.') => Ok((alphabet.full_class(), pos + 1)),
        Some(b'[') => parse_bracket_class(bytes, pos, alphabet),
        Some(b'\\') => match parse_escape(bytes, pos, alphabet)? {
            (Escape::Code(c), next) => Ok((CharClass::singleton(Symbol(c)), next)),
            (Escape::Class(c), next) => Ok((c, next)),
        },
        Some(&b) => {
            if b as u32 >= alphabet.size() {
                return Err(err(pos, "symbol outside the alphabet"));
            }
            Ok((CharClass::singleton(Symbol(b as u32)), pos + 1))
        }
    }
}

fn parse_bracket_class(
    bytes: &[u8],
    start: usize,
    alphabet: &Alphabet,
) -> Result<(CharClass, usize), ClassSyntaxError> {
    debug_assert_eq!(bytes[start], b'[');
    let mut pos = start + 1;
    let negated = bytes.get(pos) == Some(&b'^');
    if negated {
        pos += 1;
    }
    let mut class = CharClass::empty();
    // One item: an escape, a literal, or a range `a-b`.
    loop {
        match bytes.get(pos) {
            None => return Err(err(start, "unterminated character class")),
            Some(b']') => {
                pos += 1;
                break;
            }
            _ => {}
        }
        let (item, next) = match bytes[pos] {
            b'\\' => parse_escape(bytes, pos, alphabet)?,
            b => {
                if b as u32 >= alphabet.size() {
                    return Err(err(pos, "symbol outside the alphabet"));
                }
                (Escape::Code(b as u32), pos + 1)
            }
        };
        pos = next;
        match item {
            Escape::Class(c) => class = class.union(&c),
            Escape::Code(lo) => {
                // `-` starts a range unless it is the last body character.
                if bytes.get(pos) == Some(&b'-') && bytes.get(pos + 1).is_some_and(|&b| b != b']')
                {
                    pos += 1;
                    let (hi, next) = match bytes[pos] {
                        b'\\' => match parse_escape(bytes, pos, alphabet)? {
                            (Escape::Code(c), n) => (c, n),
                            (Escape::Class(_), _) => {
                                return Err(err(pos, "class escape cannot end a range"))
                            }
                        },
                        b => {
                            if b as u32 >= alphabet.size() {
                                return Err(err(pos, "symbol outside the alphabet"));
                            }
                            (b as u32, pos + 1)
                        }
                    };
                    if hi < lo {
                        return Err(err(pos, "range bounds out of order"));
                    }
                    pos = next;
                    class = class.union(&CharClass::from_ranges([(lo, hi)]));
                } else {
                    class = class.union(&CharClass::singleton(Symbol(lo)));
                }
            }
        }
    }
    let class = if negated {
        alphabet.complement(&class)
    } else {
        class
    };
    Ok((class, pos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn class(text: &str) -> CharClass {
        CharClass::parse(text, &Alphabet::BYTES).unwrap()
    }

    /// Reference membership set, for brute-force comparison.
    fn members(c: &CharClass, alphabet: &Alphabet) -> Vec<u32> {
        (0..alphabet.size())
            .filter(|&s| c.contains(Symbol(s)))
            .collect()
    }

    #[test]
    fn union_merges_ranges() {
        assert_eq!(class("[a-c]").union(&class("[b-e]")), class("[a-e]"));
        let x = class("[p-t]");
        assert_eq!(x.union(&CharClass::empty()), x);
    }

    #[test]
    fn union_agrees_with_membership_enumeration() {
        let a = class("[ac]");
        let b = class("[b]");
        let expected: Vec<u32> = (0..256u32)
            .filter(|&s| a.contains(Symbol(s)) || b.contains(Symbol(s)))
            .collect();
        assert_eq!(members(&a.union(&b), &Alphabet::BYTES), expected);
        assert_eq!(a.union(&b), class("[a-c]"));
    }

    #[test]
    fn complement_is_involutive() {
        let alpha = Alphabet::BYTES;
        for text in ["[a-c]", "[]", ".", "[^xyz]", "[\\x00-\\x10Z]"] {
            let x = class(text);
            assert_eq!(alpha.complement(&alpha.complement(&x)), x);
        }
    }

    #[test]
    fn intersect_examples() {
        let expected: Vec<u32> = (0..256u32)
            .filter(|&s| class("[a-e]").contains(Symbol(s)) && class("[c-g]").contains(Symbol(s)))
            .collect();
        let got = class("[a-e]").intersect(&class("[c-g]"));
        assert_eq!(members(&got, &Alphabet::BYTES), expected);
        assert_eq!(got, class("[c-e]"));

        let x = class("[m-q]");
        assert!(x.intersect(&Alphabet::BYTES.complement(&x)).is_empty());
    }

    #[test]
    fn minterms_of_empty_set_is_full_alphabet() {
        let alpha = Alphabet::BYTES;
        assert_eq!(alpha.minterms(&[]), vec![alpha.full_class()]);
    }

    #[test]
    fn minterms_of_single_class() {
        let alpha = Alphabet::BYTES;
        let a = class("[a]");
        let mut got = alpha.minterms(&[a.clone()]);
        got.sort();
        let mut expected = vec![a.clone(), alpha.complement(&a)];
        expected.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn minterms_enumerated_by_sign_combination() {
        // minterms({[ab],[bc]}) = the non-empty conjunctions over the four
        // sign choices: {[a],[b],[c],[^a-c]}.
        let alpha = Alphabet::BYTES;
        let inputs = [class("[ab]"), class("[bc]")];
        let mut expected = Vec::new();
        for signs in 0..4u8 {
            let mut acc = alpha.full_class();
            for (i, c) in inputs.iter().enumerate() {
                let pick = if signs & (1 << i) != 0 {
                    c.clone()
                } else {
                    alpha.complement(c)
                };
                acc = acc.intersect(&pick);
            }
            if !acc.is_empty() {
                expected.push(acc);
            }
        }
        expected.sort();
        let mut got = alpha.minterms(&inputs);
        got.sort();
        assert_eq!(got, expected);
        assert_eq!(
            got,
            {
                let mut v = vec![class("[a]"), class("[b]"), class("[c]"), class("[^a-c]")];
                v.sort();
                v
            }
        );
    }

    #[test]
    fn render_parse_round_trip_examples() {
        for text in [".", "[]", "a", "\\n", "[a-c]", "[^x]", "[0-9A-Fa-f]"] {
            let c = class(text);
            let rendered = c.render(&Alphabet::BYTES);
            assert_eq!(class(&rendered), c, "round trip of {text:?}");
        }
    }

    fn arb_class(alphabet_size: u32) -> impl Strategy<Value = CharClass> {
        prop::collection::vec((0..alphabet_size, 0..alphabet_size), 0..4).prop_map(move |pairs| {
            CharClass::from_ranges(
                pairs
                    .into_iter()
                    .map(|(a, b)| (a.min(b), a.max(b))),
            )
        })
    }

    proptest! {
        #[test]
        fn boolean_laws_hold(a in arb_class(16), b in arb_class(16), c in arb_class(16)) {
            let alpha = Alphabet::new(16);
            // Associativity and De Morgan, checked structurally thanks to
            // canonical forms.
            prop_assert_eq!(a.union(&b).union(&c), a.union(&b.union(&c)));
            prop_assert_eq!(a.intersect(&b).intersect(&c), a.intersect(&b.intersect(&c)));
            prop_assert_eq!(
                alpha.complement(&a.union(&b)),
                alpha.complement(&a).intersect(&alpha.complement(&b))
            );
            prop_assert_eq!(
                alpha.complement(&a.intersect(&b)),
                alpha.complement(&a).union(&alpha.complement(&b))
            );
        }

        #[test]
        fn set_ops_agree_with_membership(a in arb_class(16), b in arb_class(16)) {
            let alpha = Alphabet::new(16);
            for s in 0..16u32 {
                let s = Symbol(s);
                prop_assert_eq!(a.union(&b).contains(s), a.contains(s) || b.contains(s));
                prop_assert_eq!(a.intersect(&b).contains(s), a.contains(s) && b.contains(s));
                prop_assert_eq!(a.subtract(&b).contains(s), a.contains(s) && !b.contains(s));
                prop_assert_eq!(alpha.complement(&a).contains(s), !a.contains(s));
            }
        }

        #[test]
        fn minterms_partition_the_alphabet(classes in prop::collection::vec(arb_class(16), 0..4)) {
            let alpha = Alphabet::new(16);
            let minterms = alpha.minterms(&classes);
            prop_assert!(minterms.len() as u64 <= 1u64 << classes.len().min(16));
            prop_assert!(minterms.len() <= 16);
            // Pairwise disjoint and jointly covering.
            for s in 0..16u32 {
                let hits = minterms.iter().filter(|m| m.contains(Symbol(s))).count();
                prop_assert_eq!(hits, 1);
            }
            // Each input class is a union of the minterms it contains.
            for class in &classes {
                let mut rebuilt = CharClass::empty();
                for m in &minterms {
                    if m.is_subset_of(class) {
                        rebuilt = rebuilt.union(m);
                    }
                }
                prop_assert_eq!(&rebuilt, class);
            }
        }

        #[test]
        fn render_parse_round_trip(a in arb_class(256)) {
            let rendered = a.render(&Alphabet::BYTES);
            prop_assert_eq!(CharClass::parse(&rendered, &Alphabet::BYTES).unwrap(), a);
        }
    }
}
