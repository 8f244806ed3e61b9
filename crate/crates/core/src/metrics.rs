//! Code-based measures: a table-driven lexer per language profile, and the
//! per-file metric vector (NLOC, tokens, functions, cyclomatic complexity,
//! Halstead counts and effort).
//!
//! Token classes follow a small fixed table: identifiers and literals are
//! operands, except the name introduced by a definition; definition
//! keywords are "other"; symbols and the remaining keywords are operators.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::ops::Add;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("invalid language profile: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenClass {
    Operand,
    Operator,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Identifier,
    Number,
    String,
    Keyword,
    DefinitionKeyword,
    ValueKeyword,
    DefinedName,
    Symbol,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub class: TokenClass,
    /// 1-based line where the token starts.
    pub line: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockStyle {
    Indent,
    Brace,
}

/// Class assigned to each token kind. Total by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassTable {
    pub identifier: TokenClass,
    pub number: TokenClass,
    pub string: TokenClass,
    pub keyword: TokenClass,
    pub definition_keyword: TokenClass,
    pub value_keyword: TokenClass,
    pub defined_name: TokenClass,
    pub symbol: TokenClass,
}

impl Default for ClassTable {
    fn default() -> Self {
        Self {
            identifier: TokenClass::Operand,
            number: TokenClass::Operand,
            string: TokenClass::Operand,
            keyword: TokenClass::Operator,
            definition_keyword: TokenClass::Other,
            value_keyword: TokenClass::Operand,
            defined_name: TokenClass::Other,
            symbol: TokenClass::Operator,
        }
    }
}

impl ClassTable {
    pub fn class_of(&self, kind: TokenKind) -> TokenClass {
        match kind {
            TokenKind::Identifier => self.identifier,
            TokenKind::Number => self.number,
            TokenKind::String => self.string,
            TokenKind::Keyword => self.keyword,
            TokenKind::DefinitionKeyword => self.definition_keyword,
            TokenKind::ValueKeyword => self.value_keyword,
            TokenKind::DefinedName => self.defined_name,
            TokenKind::Symbol => self.symbol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageProfile {
    pub name: String,
    #[serde(default)]
    pub extensions: Vec<String>,
    pub block_style: BlockStyle,
    #[serde(default)]
    pub line_comments: Vec<String>,
    #[serde(default)]
    pub block_comments: Vec<(String, String)>,
    #[serde(default)]
    pub string_delimiters: Vec<String>,
    /// Delimiters whose strings may span lines.
    #[serde(default)]
    pub multiline_strings: Vec<String>,
    #[serde(default)]
    pub string_prefixes: Vec<String>,
    #[serde(default)]
    pub escape: Option<char>,
    #[serde(default)]
    pub definition_keywords: Vec<String>,
    /// Definition keywords that introduce a function (indent style).
    #[serde(default)]
    pub function_keywords: Vec<String>,
    #[serde(default)]
    pub value_keywords: Vec<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub decision_keywords: Vec<String>,
    #[serde(default)]
    pub decision_symbols: Vec<String>,
    #[serde(default)]
    pub symbols: Vec<String>,
    #[serde(default)]
    pub classes: ClassTable,
}

const PYTHON_PROFILE: &str = include_str!("../profiles/python.toml");
const CLIKE_PROFILE: &str = include_str!("../profiles/clike.toml");

impl LanguageProfile {
    pub fn from_toml_str(s: &str) -> Result<Self, ProfileError> {
        let mut p: LanguageProfile = toml::from_str(s).map_err(|e| ProfileError::Invalid(e.to_string()))?;
        p.prepare()?;
        Ok(p)
    }

    pub fn from_file(path: &Path) -> Result<Self, ProfileError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn python() -> Self {
        Self::from_toml_str(PYTHON_PROFILE).expect("bundled python profile")
    }

    pub fn clike() -> Self {
        Self::from_toml_str(CLIKE_PROFILE).expect("bundled clike profile")
    }

    fn prepare(&mut self) -> Result<(), ProfileError> {
        if self.symbols.iter().any(|s| s.is_empty()) || self.string_delimiters.iter().any(|s| s.is_empty()) {
            return Err(ProfileError::Invalid(format!("{}: empty symbol or delimiter", self.name)));
        }
        // Longest match first.
        self.symbols.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        self.string_delimiters.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        self.string_prefixes.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        Ok(())
    }

    fn keyword_kind(&self, word: &str) -> TokenKind {
        let has = |list: &[String]| list.iter().any(|k| k == word);
        if has(&self.definition_keywords) {
            TokenKind::DefinitionKeyword
        } else if has(&self.value_keywords) {
            TokenKind::ValueKeyword
        } else if has(&self.keywords) {
            TokenKind::Keyword
        } else {
            TokenKind::Identifier
        }
    }
}

/// Profiles selected by file extension.
#[derive(Debug, Clone)]
pub struct ProfileSet {
    profiles: Vec<LanguageProfile>,
}

impl Default for ProfileSet {
    fn default() -> Self {
        Self { profiles: vec![LanguageProfile::python(), LanguageProfile::clike()] }
    }
}

impl ProfileSet {
    pub fn new(profiles: Vec<LanguageProfile>) -> Self {
        Self { profiles }
    }

    /// Later profiles win over earlier ones for the same extension.
    pub fn push(&mut self, p: LanguageProfile) {
        self.profiles.insert(0, p);
    }

    pub fn for_path(&self, path: &str) -> Option<&LanguageProfile> {
        let ext = Path::new(path).extension()?.to_str()?.to_ascii_lowercase();
        self.profiles.iter().find(|p| p.extensions.iter().any(|e| e.eq_ignore_ascii_case(&ext)))
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone)]
struct RawToken {
    text: String,
    kind: TokenKind,
    line: usize,
    end_line: usize,
}

#[derive(Debug, Clone, Default)]
struct Lexed {
    tokens: Vec<RawToken>,
    /// Leading whitespace width per line (index 0 = line 1).
    indents: Vec<usize>,
    warnings: usize,
}

struct Cursor {
    chars: Vec<char>,
    pos: usize,
    line: usize,
}

impl Cursor {
    fn starts_with(&self, s: &str) -> bool {
        s.chars().enumerate().all(|(k, c)| self.chars.get(self.pos + k) == Some(&c))
    }
    fn bump(&mut self) -> Option<char> {
        let c = *self.chars.get(self.pos)?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
        }
        Some(c)
    }
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }
    fn advance(&mut self, n: usize) {
        for _ in 0..n {
            self.bump();
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

fn line_indents(text: &str) -> Vec<usize> {
    text.split('\n')
        .map(|l| l.chars().take_while(|c| *c == ' ' || *c == '\t').map(|c| if c == '\t' { 8 } else { 1 }).sum())
        .collect()
}

/// Consumes a string body after its opening delimiter.
fn lex_string(cur: &mut Cursor, delim: &str, multiline: bool, escape: Option<char>, warnings: &mut usize) {
    loop {
        if cur.starts_with(delim) {
            cur.advance(delim.chars().count());
            return;
        }
        match cur.peek() {
            None => {
                *warnings += 1;
                return;
            }
            Some('\n') if !multiline => {
                // Unterminated: recover at end of line.
                *warnings += 1;
                return;
            }
            Some(c) if Some(c) == escape => {
                cur.bump();
                cur.bump();
            }
            Some(_) => {
                cur.bump();
            }
        }
    }
}

fn lex(text: &str, p: &LanguageProfile) -> Lexed {
    let mut cur = Cursor { chars: text.chars().collect(), pos: 0, line: 1 };
    let mut out = Lexed { indents: line_indents(text), ..Default::default() };
    let push = |out: &mut Lexed, text: String, kind, line, end_line| {
        out.tokens.push(RawToken { text, kind, line, end_line });
    };
    'outer: while let Some(c) = cur.peek() {
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        for m in &p.line_comments {
            if cur.starts_with(m) {
                while let Some(c) = cur.peek() {
                    if c == '\n' {
                        break;
                    }
                    cur.bump();
                }
                continue 'outer;
            }
        }
        for (open, close) in &p.block_comments {
            if cur.starts_with(open) {
                cur.advance(open.chars().count());
                loop {
                    if cur.starts_with(close) {
                        cur.advance(close.chars().count());
                        break;
                    }
                    if cur.bump().is_none() {
                        out.warnings += 1;
                        break;
                    }
                }
                continue 'outer;
            }
        }
        let start_line = cur.line;
        let start = cur.pos;
        // String, possibly with a prefix such as r"..." or b'...'.
        let mut prefix_len = 0;
        for pre in &p.string_prefixes {
            let n = pre.chars().count();
            let matches_prefix = cur.chars[cur.pos..]
                .iter()
                .take(n)
                .map(|c| c.to_ascii_lowercase())
                .eq(pre.chars().map(|c| c.to_ascii_lowercase()));
            if matches_prefix {
                let save = cur.pos;
                cur.pos += n;
                let quoted = p.string_delimiters.iter().any(|d| cur.starts_with(d));
                cur.pos = save;
                if quoted {
                    prefix_len = n;
                    break;
                }
            }
        }
        cur.pos += prefix_len;
        if let Some(delim) = p.string_delimiters.iter().find(|d| cur.starts_with(d)).cloned() {
            cur.advance(delim.chars().count());
            let multiline = p.multiline_strings.contains(&delim);
            let escape = if prefix_len > 0 && cur.chars[start..start + prefix_len].iter().any(|c| *c == 'r' || *c == 'R') {
                None
            } else {
                p.escape
            };
            lex_string(&mut cur, &delim, multiline, escape, &mut out.warnings);
            let s: String = cur.chars[start..cur.pos].iter().collect();
            push(&mut out, s, TokenKind::String, start_line, cur.line);
            continue;
        }
        cur.pos = start;
        if c.is_ascii_digit() || (c == '.' && cur.chars.get(cur.pos + 1).is_some_and(|d| d.is_ascii_digit())) {
            let mut prev = c;
            cur.bump();
            while let Some(d) = cur.peek() {
                let exp_sign = (d == '+' || d == '-') && matches!(prev, 'e' | 'E');
                if is_ident_continue(d) || d == '.' || exp_sign {
                    prev = d;
                    cur.bump();
                } else {
                    break;
                }
            }
            let s: String = cur.chars[start..cur.pos].iter().collect();
            push(&mut out, s, TokenKind::Number, start_line, start_line);
            continue;
        }
        if is_ident_start(c) {
            while cur.peek().is_some_and(is_ident_continue) {
                cur.bump();
            }
            let s: String = cur.chars[start..cur.pos].iter().collect();
            let kind = p.keyword_kind(&s);
            push(&mut out, s, kind, start_line, start_line);
            continue;
        }
        if let Some(sym) = p.symbols.iter().find(|s| cur.starts_with(s)) {
            let n = sym.chars().count();
            cur.advance(n);
            push(&mut out, sym.clone(), TokenKind::Symbol, start_line, start_line);
            continue;
        }
        // Unknown character: an operator of its own.
        cur.bump();
        push(&mut out, c.to_string(), TokenKind::Symbol, start_line, start_line);
    }
    out
}

// ---------------------------------------------------------------------------
// Structure: definitions and function extents

struct Structure {
    /// Function owning each token (None = top level).
    owner: Vec<Option<usize>>,
    functions: usize,
}

fn mark_defined_names(tokens: &mut [RawToken]) {
    for i in 1..tokens.len() {
        if tokens[i - 1].kind == TokenKind::DefinitionKeyword && tokens[i].kind == TokenKind::Identifier {
            tokens[i].kind = TokenKind::DefinedName;
        }
    }
}

fn indent_structure(lexed: &Lexed, p: &LanguageProfile) -> Structure {
    let toks = &lexed.tokens;
    let mut owner = vec![None; toks.len()];
    let mut stack: Vec<(usize, usize)> = Vec::new(); // (indent, function)
    let mut functions = 0;
    let mut depth: i64 = 0;
    let mut last_line = 0;
    for (i, t) in toks.iter().enumerate() {
        if t.line != last_line && depth <= 0 {
            let indent = lexed.indents.get(t.line - 1).copied().unwrap_or(0);
            while stack.last().is_some_and(|(ind, _)| indent <= *ind) {
                stack.pop();
            }
        }
        last_line = t.end_line;
        if t.kind == TokenKind::DefinitionKeyword && p.function_keywords.contains(&t.text) {
            let indent = lexed.indents.get(t.line - 1).copied().unwrap_or(0);
            stack.push((indent, functions));
            functions += 1;
        }
        if t.kind == TokenKind::Symbol {
            match t.text.as_str() {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                _ => {}
            }
        }
        owner[i] = stack.last().map(|(_, f)| *f);
    }
    Structure { owner, functions }
}

/// Index of the `(` matching the `)` at `close`.
fn matching_open(tokens: &[RawToken], close: usize, floor: usize) -> Option<usize> {
    let mut depth = 0;
    for j in (floor..=close).rev() {
        match tokens[j].text.as_str() {
            ")" if tokens[j].kind == TokenKind::Symbol => depth += 1,
            "(" if tokens[j].kind == TokenKind::Symbol => {
                depth -= 1;
                if depth == 0 {
                    return Some(j);
                }
            }
            _ => {}
        }
    }
    None
}

/// Whether tokens `[start, brace)` read as a function header: a name
/// followed by a parenthesised list, and no assignment.
fn function_header(tokens: &[RawToken], start: usize, brace: usize) -> Option<usize> {
    let stmt = &tokens[start..brace];
    if stmt.iter().any(|t| t.kind == TokenKind::Symbol && t.text == "=") {
        return None;
    }
    let close = (start..brace).rev().find(|&j| tokens[j].kind == TokenKind::Symbol && tokens[j].text == ")")?;
    let open = matching_open(tokens, close, start)?;
    if open == start {
        return None;
    }
    let name = open - 1;
    matches!(tokens[name].kind, TokenKind::Identifier | TokenKind::DefinedName).then_some(name)
}

fn brace_structure(tokens: &mut [RawToken]) -> Structure {
    let mut owner = vec![None; tokens.len()];
    let mut functions = 0;
    // Open braces: Some(function) when the brace opened a function body.
    let mut braces: Vec<Option<usize>> = Vec::new();
    let mut stmt_start = 0;
    let mut current: Option<usize> = None;
    // Preprocessor lines end a statement.
    let mut directive_line: Option<usize> = None;
    let mut i = 0;
    while i < tokens.len() {
        let is_sym = tokens[i].kind == TokenKind::Symbol;
        if directive_line.is_some_and(|l| tokens[i].line != l) {
            directive_line = None;
            stmt_start = i;
        }
        if is_sym && tokens[i].text == "#" && (i == 0 || tokens[i - 1].end_line < tokens[i].line) {
            directive_line = Some(tokens[i].line);
        }
        match tokens[i].text.as_str() {
            "{" if is_sym => {
                let mut opened = None;
                if current.is_none() {
                    if let Some(name) = function_header(tokens, stmt_start, i) {
                        if tokens[name].kind == TokenKind::Identifier {
                            tokens[name].kind = TokenKind::DefinedName;
                        }
                        let f = functions;
                        functions += 1;
                        for o in owner.iter_mut().take(i).skip(stmt_start) {
                            *o = Some(f);
                        }
                        current = Some(f);
                        opened = Some(f);
                    }
                }
                braces.push(opened);
                owner[i] = current;
                stmt_start = i + 1;
            }
            "}" if is_sym => {
                owner[i] = current;
                if let Some(Some(_)) = braces.pop() {
                    current = None;
                }
                stmt_start = i + 1;
            }
            ";" if is_sym => {
                owner[i] = current;
                stmt_start = i + 1;
            }
            _ => owner[i] = current,
        }
        i += 1;
    }
    Structure { owner, functions }
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Halstead {
    pub eta1: u64,
    pub eta2: u64,
    pub n1: u64,
    pub n2: u64,
    pub effort: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FileMetricVector {
    pub nloc: u64,
    pub token_count: u64,
    pub function_count: u64,
    pub cyclomatic: u64,
    pub halstead: Halstead,
}

impl Add for FileMetricVector {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            nloc: self.nloc + o.nloc,
            token_count: self.token_count + o.token_count,
            function_count: self.function_count + o.function_count,
            cyclomatic: self.cyclomatic + o.cyclomatic,
            halstead: Halstead {
                eta1: self.halstead.eta1 + o.halstead.eta1,
                eta2: self.halstead.eta2 + o.halstead.eta2,
                n1: self.halstead.n1 + o.halstead.n1,
                n2: self.halstead.n2 + o.halstead.n2,
                effort: self.halstead.effort + o.halstead.effort,
            },
        }
    }
}

/// `E = (N1 + N2) * log2(eta1 + eta2) * (eta1 / 2) * (N2 / eta2)`; zero when
/// there are no operands or no vocabulary.
pub fn halstead_effort(eta1: u64, eta2: u64, n1: u64, n2: u64) -> f64 {
    if eta2 == 0 || eta1 + eta2 == 0 {
        return 0.0;
    }
    let length = (n1 + n2) as f64;
    let volume = length * ((eta1 + eta2) as f64).log2();
    let difficulty = (eta1 as f64 / 2.0) * (n2 as f64 / eta2 as f64);
    volume * difficulty
}

/// Tokenised file plus the count of tolerated lexing problems.
#[derive(Debug, Clone, Default)]
pub struct Analysis {
    pub tokens: Vec<Token>,
    pub metrics: FileMetricVector,
    pub warnings: usize,
}

pub fn analyze(text: &str, profile: &LanguageProfile) -> Analysis {
    let mut lexed = lex(text, profile);
    mark_defined_names(&mut lexed.tokens);
    let structure = match profile.block_style {
        BlockStyle::Indent => indent_structure(&lexed, profile),
        BlockStyle::Brace => brace_structure(&mut lexed.tokens),
    };
    let raw = &lexed.tokens;

    let mut code_lines: HashSet<usize> = HashSet::new();
    for t in raw {
        code_lines.extend(t.line..=t.end_line);
    }
    let is_decision = |t: &RawToken| match t.kind {
        TokenKind::Keyword => profile.decision_keywords.contains(&t.text),
        TokenKind::Symbol => profile.decision_symbols.contains(&t.text),
        _ => false,
    };
    let mut decisions = vec![0u64; structure.functions];
    let mut top_tokens = 0u64;
    let mut top_decisions = 0u64;
    for (t, owner) in raw.iter().zip(&structure.owner) {
        let d = is_decision(t) as u64;
        match owner {
            Some(f) => decisions[*f] += d,
            None => {
                top_tokens += 1;
                top_decisions += d;
            }
        }
    }
    let mut cyclomatic: u64 = decisions.iter().map(|d| 1 + d).sum();
    if top_tokens > 0 {
        cyclomatic += 1 + top_decisions;
    }

    let tokens: Vec<Token> = raw
        .iter()
        .map(|t| Token { text: t.text.clone(), class: profile.classes.class_of(t.kind), line: t.line })
        .collect();
    let (mut operators, mut operands) = (HashSet::new(), HashSet::new());
    let (mut n1, mut n2) = (0u64, 0u64);
    for t in &tokens {
        match t.class {
            TokenClass::Operator => {
                n1 += 1;
                operators.insert(t.text.as_str());
            }
            TokenClass::Operand => {
                n2 += 1;
                operands.insert(t.text.as_str());
            }
            TokenClass::Other => {}
        }
    }
    let (eta1, eta2) = (operators.len() as u64, operands.len() as u64);
    let metrics = FileMetricVector {
        nloc: code_lines.len() as u64,
        token_count: tokens.len() as u64,
        function_count: structure.functions as u64,
        cyclomatic,
        halstead: Halstead { eta1, eta2, n1, n2, effort: halstead_effort(eta1, eta2, n1, n2) },
    };
    Analysis { tokens, metrics, warnings: lexed.warnings }
}

pub fn tokenize(text: &str, profile: &LanguageProfile) -> Vec<Token> {
    analyze(text, profile).tokens
}

pub fn file_metrics(text: &str, profile: &LanguageProfile) -> FileMetricVector {
    analyze(text, profile).metrics
}

fn absdiff(a: u64, b: u64) -> u64 {
    a.abs_diff(b)
}

/// Component-wise `|post - pre|`. A missing file is the zero vector.
pub fn commit_code_delta(pre: &FileMetricVector, post: &FileMetricVector) -> FileMetricVector {
    FileMetricVector {
        nloc: absdiff(pre.nloc, post.nloc),
        token_count: absdiff(pre.token_count, post.token_count),
        function_count: absdiff(pre.function_count, post.function_count),
        cyclomatic: absdiff(pre.cyclomatic, post.cyclomatic),
        halstead: Halstead {
            eta1: absdiff(pre.halstead.eta1, post.halstead.eta1),
            eta2: absdiff(pre.halstead.eta2, post.halstead.eta2),
            n1: absdiff(pre.halstead.n1, post.halstead.n1),
            n2: absdiff(pre.halstead.n2, post.halstead.n2),
            effort: (post.halstead.effort - pre.halstead.effort).abs(),
        },
    }
}

// ---------------------------------------------------------------------------
// Export

pub const METRICS_HEADER: [&str; 11] =
    ["commit_hash", "path", "nloc", "tokens", "functions", "cyclomatic", "eta1", "eta2", "n1", "n2", "effort"];

/// One row of the per-file delta export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub commit_hash: String,
    pub path: String,
    pub nloc: u64,
    pub tokens: u64,
    pub functions: u64,
    pub cyclomatic: u64,
    pub eta1: u64,
    pub eta2: u64,
    pub n1: u64,
    pub n2: u64,
    pub effort: f64,
}

impl MetricRow {
    pub fn new(commit_hash: &str, path: &str, v: &FileMetricVector) -> Self {
        Self {
            commit_hash: commit_hash.to_string(),
            path: path.to_string(),
            nloc: v.nloc,
            tokens: v.token_count,
            functions: v.function_count,
            cyclomatic: v.cyclomatic,
            eta1: v.halstead.eta1,
            eta2: v.halstead.eta2,
            n1: v.halstead.n1,
            n2: v.halstead.n2,
            effort: v.halstead.effort,
        }
    }

    pub fn vector(&self) -> FileMetricVector {
        FileMetricVector {
            nloc: self.nloc,
            token_count: self.tokens,
            function_count: self.functions,
            cyclomatic: self.cyclomatic,
            halstead: Halstead { eta1: self.eta1, eta2: self.eta2, n1: self.n1, n2: self.n2, effort: self.effort },
        }
    }
}

pub fn write_metric_rows<W: Write>(writer: W, rows: &[MetricRow]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metric_rows<R: std::io::Read>(reader: R) -> Result<Vec<MetricRow>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

/// Per-file deltas of one commit, for files a profile recognises.
pub fn commit_deltas(commit: &crate::ingest::CommitRecord, profiles: &ProfileSet) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for ch in &commit.changes {
        if ch.is_binary {
            continue;
        }
        let measure = |path: &str, text: &Option<String>| -> FileMetricVector {
            match (profiles.for_path(path), text) {
                (Some(p), Some(t)) => file_metrics(t, p),
                _ => FileMetricVector::default(),
            }
        };
        let pre = measure(ch.source_path(), &ch.pre_text);
        let post = measure(&ch.path, &ch.post_text);
        if profiles.for_path(ch.source_path()).is_none() && profiles.for_path(&ch.path).is_none() {
            continue;
        }
        rows.push(MetricRow::new(&commit.hash, &ch.path, &commit_code_delta(&pre, &post)));
    }
    rows.sort_by(|a, b| a.path.cmp(&b.path));
    rows
}

/// Sums per-commit deltas across files.
pub fn sum_by_commit(rows: &[MetricRow]) -> BTreeMap<String, FileMetricVector> {
    let mut out: BTreeMap<String, FileMetricVector> = BTreeMap::new();
    for r in rows {
        let e = out.entry(r.commit_hash.clone()).or_default();
        *e = *e + r.vector();
    }
    out
}
