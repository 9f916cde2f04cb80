//! PKGBUILD recipe parser.
//!
//! Handles the subset of shell used by package recipes: scalar and array
//! assignments, single/double quoting, `$var`/`${var}` substitution and
//! `{a,b}` brace expansion. Function bodies are skipped and nothing is
//! executed.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash_bytes, Digest};
use crate::model::canonical_json;

/// Tag stored in every parsed recipe so replays can pin the grammar version.
pub const PARSER_VERSION: &str = "regexp v1.0";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PkgbuildError {
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("unbalanced braces in `{0}`")]
    UnbalancedBraces(String),
    #[error("nested brace groups are not supported: `{0}`")]
    NestedBraces(String),
    #[error("unterminated quote starting on line {0}")]
    UnterminatedQuote(usize),
    #[error("unterminated array for `{0}`")]
    UnterminatedArray(String),
    #[error("invalid pkgrel `{0}`")]
    InvalidRelease(String),
    #[error("{checksums} checksums for {sources} sources")]
    ChecksumCount { sources: usize, checksums: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChecksumScheme {
    #[default]
    None,
    Sha256,
    Md5,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackageRecipe {
    pub name: String,
    #[serde(rename = "pkgver")]
    pub version: String,
    #[serde(rename = "pkgrel")]
    pub release: u32,
    #[serde(rename = "pkgdesc")]
    pub description: String,
    pub url: String,
    #[serde(rename = "arch")]
    pub architectures: Vec<String>,
    #[serde(rename = "license")]
    pub licenses: Vec<String>,
    pub depends: Vec<String>,
    pub makedepends: Vec<String>,
    pub optdepends: Vec<String>,
    #[serde(rename = "source")]
    pub sources: Vec<String>,
    pub checksum_scheme: ChecksumScheme,
    pub checksums: Vec<String>,
    #[serde(rename = "validpgpkeys")]
    pub valid_pgp_keys: Vec<String>,
    #[serde(rename = "parser")]
    pub parser_version: String,
    /// Hash of [`canonical_bytes`](Self::canonical_bytes); the identity vouches refer to.
    pub checksum: Digest,
}

impl PackageRecipe {
    /// Sorted-key JSON of every field except `checksum`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_value(self).expect("recipe is representable");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("checksum");
        }
        canonical_json(&v)
    }

    pub fn compute_checksum(&self) -> Digest {
        hash_bytes(&self.canonical_bytes())
    }

    /// Canonical form including the checksum, as printed by `pkgbuild parse`.
    pub fn to_canonical_string(&self) -> String {
        String::from_utf8(canonical_json(self)).expect("json is utf-8")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Quote {
    Bare,
    Single,
    Double,
}

#[derive(Clone, Copy, Debug)]
struct Ch {
    c: char,
    quote: Quote,
}

type RawWord = Vec<Ch>;

fn bare(s: &str) -> RawWord {
    s.chars().map(|c| Ch { c, quote: Quote::Bare }).collect()
}

fn render(word: &[Ch]) -> String {
    word.iter().map(|ch| ch.c).collect()
}

/// Replaces `$name` and `${name}` with bound values; unbound references stay verbatim.
pub fn substitute_vars(value: &str, bindings: &HashMap<String, String>) -> String {
    substitute_raw(&bare(value), bindings)
}

fn is_name_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn substitute_raw(word: &[Ch], bindings: &HashMap<String, String>) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < word.len() {
        let ch = word[i];
        if ch.c != '$' || ch.quote == Quote::Single || i + 1 >= word.len() {
            out.push(ch.c);
            i += 1;
            continue;
        }
        if word[i + 1].c == '{' {
            if let Some(close) = word[i + 2..].iter().position(|x| x.c == '}') {
                let name = render(&word[i + 2..i + 2 + close]);
                let end = i + 2 + close + 1;
                match bindings.get(&name) {
                    Some(v) if is_plain_name(&name) => out.push_str(v),
                    _ => out.push_str(&render(&word[i..end])),
                }
                i = end;
                continue;
            }
            out.push(ch.c);
            i += 1;
        } else if is_name_start(word[i + 1].c) {
            let mut j = i + 1;
            while j < word.len() && is_name_char(word[j].c) && word[j].quote == ch.quote {
                j += 1;
            }
            let name = render(&word[i + 1..j]);
            match bindings.get(&name) {
                Some(v) => out.push_str(v),
                None => out.push_str(&render(&word[i..j])),
            }
            i = j;
        } else {
            out.push(ch.c);
            i += 1;
        }
    }
    out
}

fn is_plain_name(name: &str) -> bool {
    let mut cs = name.chars();
    cs.next().is_some_and(is_name_start) && cs.all(is_name_char)
}

/// Expands `{a,b,...}` groups. A token without a group is returned as a singleton.
pub fn expand_braces(token: &str) -> Result<Vec<String>, PkgbuildError> {
    Ok(expand_raw(&bare(token), token)?.iter().map(|w| render(w)).collect())
}

fn expand_raw(word: &[Ch], display: &str) -> Result<Vec<RawWord>, PkgbuildError> {
    let mut i = 0;
    while i < word.len() {
        let ch = word[i];
        if ch.quote == Quote::Bare && ch.c == '$' && word.get(i + 1).is_some_and(|n| n.c == '{') {
            match word[i + 2..].iter().position(|x| x.c == '}') {
                Some(close) => i += close + 3,
                None => return Err(PkgbuildError::UnbalancedBraces(display.to_string())),
            }
            continue;
        }
        if ch.quote == Quote::Bare && ch.c == '}' {
            return Err(PkgbuildError::UnbalancedBraces(display.to_string()));
        }
        if ch.quote != Quote::Bare || ch.c != '{' {
            i += 1;
            continue;
        }
        let mut commas = Vec::new();
        let mut close = None;
        for (j, x) in word.iter().enumerate().skip(i + 1) {
            if x.quote != Quote::Bare {
                continue;
            }
            match x.c {
                '{' => return Err(PkgbuildError::NestedBraces(display.to_string())),
                ',' => commas.push(j),
                '}' => {
                    close = Some(j);
                    break;
                }
                _ => {}
            }
        }
        let close = close.ok_or_else(|| PkgbuildError::UnbalancedBraces(display.to_string()))?;
        if commas.is_empty() {
            // `{}` or `{x}` is literal text in shell.
            i = close + 1;
            continue;
        }
        let prefix = &word[..i];
        let mut bounds = vec![i];
        bounds.extend(&commas);
        bounds.push(close);
        let mut out = Vec::new();
        for w in bounds.windows(2) {
            let mut candidate: RawWord = prefix.to_vec();
            candidate.extend_from_slice(&word[w[0] + 1..w[1]]);
            candidate.extend_from_slice(&word[close + 1..]);
            // The prefix holds no active groups, so restart scanning after it.
            let skip = i + (w[1] - w[0] - 1);
            for mut tail in expand_raw(&candidate[skip..], display)? {
                let mut full = candidate[..skip].to_vec();
                full.append(&mut tail);
                out.push(full);
            }
        }
        return Ok(out);
    }
    Ok(vec![word.to_vec()])
}

enum Value {
    Scalar(RawWord),
    Array(Vec<RawWord>),
}

struct Lexer<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    _src: &'a str,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { chars: src.chars().collect(), pos: 0, line: 1, _src: src }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied();
        if let Some(c) = c {
            self.pos += 1;
            if c == '\n' {
                self.line += 1;
            }
        }
        c
    }

    fn skip_to_eol(&mut self) {
        while let Some(c) = self.peek() {
            if c == '\n' {
                break;
            }
            self.bump();
        }
    }

    fn skip_blank(&mut self, newlines: bool) {
        while let Some(c) = self.peek() {
            match c {
                ' ' | '\t' | '\r' => {
                    self.bump();
                }
                '\n' if newlines => {
                    self.bump();
                }
                '\\' if self.peek_at(1) == Some('\n') => {
                    self.bump();
                    self.bump();
                }
                '#' if newlines => self.skip_to_eol(),
                _ => break,
            }
        }
    }

    fn ident(&mut self) -> Option<String> {
        if !self.peek().is_some_and(is_name_start) {
            return None;
        }
        let mut s = String::new();
        while let Some(c) = self.peek().filter(|c| is_name_char(*c)) {
            s.push(c);
            self.bump();
        }
        Some(s)
    }

    /// Reads one shell word. Stops at unquoted whitespace, `;`, or `)` when `in_array`.
    fn word(&mut self, in_array: bool) -> Result<RawWord, PkgbuildError> {
        let mut w = Vec::new();
        while let Some(c) = self.peek() {
            match c {
                ' ' | '\t' | '\r' | '\n' | ';' => break,
                ')' if in_array => break,
                '\\' => {
                    self.bump();
                    match self.bump() {
                        Some('\n') | None => {}
                        Some(e) => w.push(Ch { c: e, quote: Quote::Single }),
                    }
                }
                '\'' => {
                    let start = self.line;
                    self.bump();
                    loop {
                        match self.bump() {
                            Some('\'') => break,
                            Some(c) => w.push(Ch { c, quote: Quote::Single }),
                            None => return Err(PkgbuildError::UnterminatedQuote(start)),
                        }
                    }
                }
                '"' => {
                    let start = self.line;
                    self.bump();
                    loop {
                        match self.bump() {
                            Some('"') => break,
                            Some('\\') => match self.bump() {
                                Some('\n') => {}
                                Some(e @ ('"' | '\\' | '$' | '`')) => w.push(Ch { c: e, quote: Quote::Single }),
                                Some(e) => {
                                    w.push(Ch { c: '\\', quote: Quote::Double });
                                    w.push(Ch { c: e, quote: Quote::Double });
                                }
                                None => return Err(PkgbuildError::UnterminatedQuote(start)),
                            },
                            Some(c) => w.push(Ch { c, quote: Quote::Double }),
                            None => return Err(PkgbuildError::UnterminatedQuote(start)),
                        }
                    }
                }
                '$' if self.peek_at(1) == Some('(') => {
                    // Command substitution is kept verbatim.
                    let mut depth = 0usize;
                    while let Some(c) = self.bump() {
                        w.push(Ch { c, quote: Quote::Single });
                        match c {
                            '(' => depth += 1,
                            ')' => {
                                depth -= 1;
                                if depth == 0 {
                                    break;
                                }
                            }
                            _ => {}
                        }
                    }
                }
                _ => {
                    self.bump();
                    w.push(Ch { c, quote: Quote::Bare });
                }
            }
        }
        Ok(w)
    }

    fn array(&mut self, key: &str) -> Result<Vec<RawWord>, PkgbuildError> {
        let mut items = Vec::new();
        loop {
            self.skip_blank(true);
            match self.peek() {
                None => return Err(PkgbuildError::UnterminatedArray(key.to_string())),
                Some(')') => {
                    self.bump();
                    return Ok(items);
                }
                Some(_) => {
                    let w = self.word(true)?;
                    if w.is_empty() {
                        // Stray `;` or similar inside the list.
                        self.bump();
                    } else {
                        items.push(w);
                    }
                }
            }
        }
    }

    /// Skips a `name() { ... }` body, counting braces outside quotes.
    fn skip_function(&mut self) {
        self.skip_blank(true);
        if self.peek() != Some('{') {
            self.skip_to_eol();
            return;
        }
        let mut depth = 0i64;
        let mut quote: Option<char> = None;
        while let Some(c) = self.bump() {
            match (quote, c) {
                (Some(q), c) if c == q => quote = None,
                (Some('"'), '\\') => {
                    self.bump();
                }
                (Some(_), _) => {}
                (None, '\\') => {
                    self.bump();
                }
                (None, '\'' | '"') => quote = Some(c),
                (None, '#') => self.skip_to_eol(),
                (None, '{') => depth += 1,
                (None, '}') => {
                    depth -= 1;
                    if depth == 0 {
                        return;
                    }
                }
                _ => {}
            }
        }
    }
}

const ARRAY_KEYS: &[&str] =
    &["arch", "license", "depends", "makedepends", "optdepends", "source", "sha256sums", "md5sums", "validpgpkeys"];

/// Parses recipe text into a [`PackageRecipe`].
pub fn parse_pkgbuild(text: &str) -> Result<PackageRecipe, PkgbuildError> {
    let mut lx = Lexer::new(text);
    let mut bindings: HashMap<String, String> = HashMap::new();
    let mut fields: HashMap<String, Vec<String>> = HashMap::new();

    loop {
        lx.skip_blank(true);
        let Some(c) = lx.peek() else { break };
        if c == ';' {
            lx.bump();
            continue;
        }
        let Some(name) = lx.ident() else {
            lx.skip_to_eol();
            continue;
        };
        let append = lx.peek() == Some('+') && lx.peek_at(1) == Some('=');
        if append {
            lx.bump();
        }
        match lx.peek() {
            Some('=') => {
                lx.bump();
                let value = if lx.peek() == Some('(') {
                    lx.bump();
                    Value::Array(lx.array(&name)?)
                } else {
                    Value::Scalar(lx.word(false)?)
                };
                let words = match value {
                    Value::Scalar(w) => {
                        let s = substitute_raw(&w, &bindings);
                        if s.is_empty() && !ARRAY_KEYS.contains(&name.as_str()) {
                            vec![String::new()]
                        } else if s.is_empty() {
                            vec![]
                        } else {
                            vec![s]
                        }
                    }
                    Value::Array(items) => {
                        let mut out = Vec::new();
                        for item in items {
                            for alt in expand_raw(&item, &render(&item))? {
                                out.push(substitute_raw(&alt, &bindings));
                            }
                        }
                        out
                    }
                };
                let entry = fields.entry(name.clone()).or_default();
                if !append {
                    entry.clear();
                }
                entry.extend(words);
                bindings.insert(name, entry.first().cloned().unwrap_or_default());
            }
            Some('(') => {
                lx.bump();
                lx.skip_blank(false);
                if lx.peek() == Some(')') {
                    lx.bump();
                    lx.skip_function();
                } else {
                    lx.skip_to_eol();
                }
            }
            _ => {
                lx.skip_blank(false);
                if lx.peek() == Some('(') && lx.peek_at(1) == Some(')') {
                    lx.bump();
                    lx.bump();
                    lx.skip_function();
                } else {
                    lx.skip_to_eol();
                }
            }
        }
    }

    let scalar = |k: &str| fields.get(k).and_then(|v| v.first().cloned());
    let list = |k: &str| fields.get(k).cloned().unwrap_or_default();

    let name = scalar("pkgname").filter(|s| !s.is_empty()).ok_or(PkgbuildError::MissingKey("pkgname"))?;
    let version = scalar("pkgver").filter(|s| !s.is_empty()).ok_or(PkgbuildError::MissingKey("pkgver"))?;
    let release = match scalar("pkgrel") {
        None => 1,
        Some(r) => {
            let digits: String = r.chars().take_while(|c| c.is_ascii_digit()).collect();
            digits.parse().map_err(|_| PkgbuildError::InvalidRelease(r.clone()))?
        }
    };

    let sources = list("source");
    let (checksum_scheme, checksums) = if fields.contains_key("sha256sums") {
        (ChecksumScheme::Sha256, list("sha256sums"))
    } else if fields.contains_key("md5sums") {
        (ChecksumScheme::Md5, list("md5sums"))
    } else {
        (ChecksumScheme::None, Vec::new())
    };
    if !sources.is_empty() && !checksums.is_empty() && sources.len() != checksums.len() {
        return Err(PkgbuildError::ChecksumCount { sources: sources.len(), checksums: checksums.len() });
    }

    let mut recipe = PackageRecipe {
        name,
        version,
        release,
        description: scalar("pkgdesc").unwrap_or_default(),
        url: scalar("url").unwrap_or_default(),
        architectures: list("arch"),
        licenses: list("license"),
        depends: list("depends"),
        makedepends: list("makedepends"),
        optdepends: list("optdepends"),
        sources,
        checksum_scheme,
        checksums,
        valid_pgp_keys: list("validpgpkeys"),
        parser_version: PARSER_VERSION.to_string(),
        checksum: Digest::ZERO,
    };
    recipe.checksum = recipe.compute_checksum();
    Ok(recipe)
}
