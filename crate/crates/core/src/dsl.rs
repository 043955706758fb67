//! The `.ctc` experiment description language.
//!
//! ```text
//! # comments run to end of line
//! experiment brun_ch
//! gate CH(control=lower)            # or: gate matrix [1+0i, 0+0i, ...]
//! branch 0.5: ket "00"              # or: branch 0.5: vector [1+0i, 0+0i]
//! branch 0.5: ket "1-"
//! ctc arm=last
//! solver { tol=1e-12, max_iter=1000, p=0.0, damping=1.0, initial=in }
//! action discriminate               # solve | correlate [semantics=...] | sweep axis=p grid=[...]
//! measure basis=computational
//! ```
//!
//! Statements are line oriented; a newline inside `[...]` or `{...}` does not
//! end the statement. Parsing never stops at the first problem: every
//! statement is checked and all diagnostics are returned together.

use std::fmt;

use crate::error::{CtcError, Result};
use crate::experiments::{MeasurementBasis, MixingSemantics, SweepAxis};
use crate::numerics::{ComplexMatrix, Sampler, Seed, C64};
use crate::quantum::{standard_gate, standard_ket, ControlArm, DensityMatrix, GateName, UnitaryGate};
use crate::solver::{BipartiteState, Branch, EnsembleSpec, InitialState, SolverOptions, NORM_TOL};

/// Tolerance on the sum of branch weights in experiment files.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl Diagnostic {
    fn error(line: usize, column: usize, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            line,
            column,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}:{}: {sev}: {}", self.line, self.column, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GateDecl {
    Named { name: GateName, control: Option<ControlArm> },
    /// Row-major entries.
    Matrix(Vec<C64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateLiteral {
    Ket(String),
    Vector(Vec<C64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchDecl {
    pub weight: f64,
    pub state: StateLiteral,
}

/// Which factor of each branch state travels into the CTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CtcArm {
    First,
    #[default]
    Last,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialDecl {
    Input,
    Mixed,
    /// Seeded random pure state; the seed comes from the command line.
    Random,
    Ket(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverBlock {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub p: Option<f64>,
    pub damping: Option<f64>,
    pub initial: Option<InitialDecl>,
}

impl SolverBlock {
    fn is_empty(&self) -> bool {
        *self == SolverBlock::default()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Action {
    #[default]
    Solve,
    Discriminate,
    Correlate {
        semantics: MixingSemantics,
    },
    Sweep {
        axis: SweepAxis,
        grid: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentAst {
    pub name: String,
    pub gate: GateDecl,
    pub branches: Vec<BranchDecl>,
    pub ctc_arm: CtcArm,
    pub solver: SolverBlock,
    pub action: Action,
    pub measure: Option<MeasurementBasis>,
}

// ---------------------------------------------------------------- lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number { value: f64, imag: bool, integral: bool },
    Str(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Eq,
    Comma,
    Colon,
    Plus,
    Minus,
    Newline,
    Bad(String),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number { .. } => "number".into(),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Newline => "end of line".into(),
            Tok::Bad(s) => format!("`{s}`"),
            Tok::Eof => "end of file".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(source: &str) -> Vec<Token> {
    let chars: Vec<char> = source.chars().collect();
    let mut out: Vec<Token> = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let mut depth = 0usize;

    while i < chars.len() {
        let c = chars[i];
        let (tline, tcol) = (line, col);
        let push = |tok: Tok, out: &mut Vec<Token>| out.push(Token { tok, line: tline, col: tcol });

        if c == '\n' {
            if depth == 0 {
                push(Tok::Newline, &mut out);
            }
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
                col += 1;
            }
            continue;
        }
        if c == '"' {
            let mut j = i + 1;
            while j < chars.len() && chars[j] != '"' && chars[j] != '\n' {
                j += 1;
            }
            if j < chars.len() && chars[j] == '"' {
                push(Tok::Str(chars[i + 1..j].iter().collect()), &mut out);
                col += j + 1 - i;
                i = j + 1;
            } else {
                push(Tok::Bad("unterminated string".into()), &mut out);
                col += j - i;
                i = j;
            }
            continue;
        }
        let prev_is_value = matches!(
            out.last().map(|t| &t.tok),
            Some(Tok::Number { .. } | Tok::RParen | Tok::RBracket | Tok::Ident(_) | Tok::Str(_))
        );
        let starts_number = c.is_ascii_digit()
            || (c == '.' && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit()))
            || ((c == '+' || c == '-')
                && !prev_is_value
                && chars
                    .get(i + 1)
                    .is_some_and(|n| n.is_ascii_digit() || *n == '.'));
        if starts_number {
            let mut j = i;
            if chars[j] == '+' || chars[j] == '-' {
                j += 1;
            }
            let mut integral = true;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            if j < chars.len() && chars[j] == '.' {
                integral = false;
                j += 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
            }
            if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                integral = false;
                j += 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
            }
            let text: String = chars[i..j].iter().collect();
            let mut imag = false;
            if j < chars.len() && chars[j] == 'i' {
                imag = true;
                j += 1;
            }
            // A number glued to further word characters is malformed.
            let mut k = j;
            while k < chars.len() && (chars[k].is_alphanumeric() || chars[k] == '_' || chars[k] == '.') {
                k += 1;
            }
            let tok = match text.parse::<f64>() {
                Ok(value) if k == j && value.is_finite() => Tok::Number { value, imag, integral },
                _ => Tok::Bad(chars[i..k].iter().collect()),
            };
            push(tok, &mut out);
            col += k - i;
            i = k;
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let mut j = i + 1;
            while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_' || chars[j] == '-') {
                j += 1;
            }
            push(Tok::Ident(chars[i..j].iter().collect()), &mut out);
            col += j - i;
            i = j;
            continue;
        }
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => {
                depth += 1;
                Tok::LBracket
            }
            ']' => {
                depth = depth.saturating_sub(1);
                Tok::RBracket
            }
            '{' => {
                depth += 1;
                Tok::LBrace
            }
            '}' => {
                depth = depth.saturating_sub(1);
                Tok::RBrace
            }
            '=' => Tok::Eq,
            ',' => Tok::Comma,
            ':' => Tok::Colon,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            other => Tok::Bad(other.to_string()),
        };
        push(tok, &mut out);
        i += 1;
        col += 1;
    }
    out.push(Token { tok: Tok::Eof, line, col });
    out
}

// ---------------------------------------------------------------- parser

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    diagnostics: Vec<Diagnostic>,
}

type PResult<T> = std::result::Result<T, Diagnostic>;

/// Partially built AST plus the source positions needed for later checks.
#[derive(Default)]
struct Draft {
    name: Option<String>,
    gate: Option<(GateDecl, usize, usize)>,
    branches: Vec<(BranchDecl, usize, usize)>,
    ctc_arm: Option<CtcArm>,
    solver: Option<(SolverBlock, usize, usize)>,
    action: Option<(Action, usize, usize)>,
    measure: Option<MeasurementBasis>,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn bump(&mut self) -> Token {
        let t = self.peek().clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, message: impl Into<String>) -> Diagnostic {
        let t = self.peek();
        Diagnostic::error(t.line, t.col, message)
    }

    fn expect(&mut self, want: Tok, what: &str) -> PResult<Token> {
        if self.peek().tok == want {
            Ok(self.bump())
        } else {
            Err(self.err_here(format!("expected {what}, found {}", self.peek().tok.describe())))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<(String, usize, usize)> {
        match self.peek().tok.clone() {
            Tok::Ident(s) => {
                let t = self.bump();
                Ok((s, t.line, t.col))
            }
            Tok::Bad(s) => Err(self.err_here(format!("malformed token `{s}`"))),
            other => Err(self.err_here(format!("expected {what}, found {}", other.describe()))),
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<()> {
        let (s, line, col) = self.ident(&format!("`{kw}`"))?;
        if s == kw {
            Ok(())
        } else {
            Err(Diagnostic::error(line, col, format!("expected `{kw}`, found `{s}`")))
        }
    }

    /// `key=` prefix of a key-value pair.
    fn key(&mut self, kw: &str) -> PResult<()> {
        self.keyword(kw)?;
        self.expect(Tok::Eq, "`=`")?;
        Ok(())
    }

    fn number(&mut self, what: &str) -> PResult<(f64, bool)> {
        match self.peek().tok.clone() {
            Tok::Number { value, imag: false, integral } => {
                self.bump();
                Ok((value, integral))
            }
            Tok::Bad(s) => Err(self.err_here(format!("malformed number `{s}`"))),
            other => Err(self.err_here(format!("expected {what}, found {}", other.describe()))),
        }
    }

    fn real(&mut self, what: &str) -> PResult<f64> {
        self.number(what).map(|(v, _)| v)
    }

    fn integer(&mut self, what: &str) -> PResult<usize> {
        let t = self.peek().clone();
        let (v, integral) = self.number(what)?;
        if !integral || v < 0.0 || v > u32::MAX as f64 {
            return Err(Diagnostic::error(t.line, t.col, format!("{what} must be a non-negative integer")));
        }
        Ok(v as usize)
    }

    fn complex(&mut self) -> PResult<C64> {
        match self.peek().tok.clone() {
            Tok::Number { value, imag: true, .. } => {
                self.bump();
                Ok(C64::new(0.0, value))
            }
            Tok::Number { value, imag: false, .. } => {
                self.bump();
                let sign = match self.peek().tok {
                    Tok::Plus => 1.0,
                    Tok::Minus => -1.0,
                    _ => return Ok(C64::new(value, 0.0)),
                };
                self.bump();
                match self.peek().tok.clone() {
                    Tok::Number { value: im, imag: true, .. } if im >= 0.0 => {
                        self.bump();
                        Ok(C64::new(value, sign * im))
                    }
                    Tok::Bad(s) => Err(self.err_here(format!("malformed number `{s}`"))),
                    _ => Err(self.err_here("expected imaginary part like `0.5i`")),
                }
            }
            Tok::Bad(s) => Err(self.err_here(format!("malformed number `{s}`"))),
            other => Err(self.err_here(format!("expected complex number, found {}", other.describe()))),
        }
    }

    fn list<T>(&mut self, mut item: impl FnMut(&mut Self) -> PResult<T>) -> PResult<Vec<T>> {
        self.expect(Tok::LBracket, "`[`")?;
        let mut out = Vec::new();
        if self.peek().tok == Tok::RBracket {
            self.bump();
            return Ok(out);
        }
        loop {
            out.push(item(self)?);
            match self.peek().tok {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RBracket => {
                    self.bump();
                    return Ok(out);
                }
                _ => return Err(self.err_here(format!("expected `,` or `]`, found {}", self.peek().tok.describe()))),
            }
        }
    }

    fn string(&mut self, what: &str) -> PResult<(String, usize, usize)> {
        match self.peek().tok.clone() {
            Tok::Str(s) => {
                let t = self.bump();
                Ok((s, t.line, t.col))
            }
            Tok::Bad(s) => Err(self.err_here(format!("malformed token `{s}`"))),
            other => Err(self.err_here(format!("expected {what}, found {}", other.describe()))),
        }
    }

    fn skip_line(&mut self) {
        while !matches!(self.peek().tok, Tok::Newline | Tok::Eof) {
            self.bump();
        }
    }

    fn end_of_statement(&mut self) -> PResult<()> {
        match self.peek().tok {
            Tok::Newline | Tok::Eof => Ok(()),
            ref other => Err(self.err_here(format!("unexpected {} after statement", other.describe()))),
        }
    }

    fn statement(&mut self, draft: &mut Draft) -> PResult<()> {
        let (kw, line, col) = self.ident("a statement keyword")?;
        let dup = |what: &str| Diagnostic::error(line, col, format!("duplicate `{what}` statement"));
        match kw.as_str() {
            "experiment" => {
                let (name, _, _) = self.ident("experiment name")?;
                if draft.name.is_some() {
                    return Err(dup("experiment"));
                }
                draft.name = Some(name);
            }
            "gate" => {
                let decl = self.gate_decl()?;
                if draft.gate.is_some() {
                    return Err(Diagnostic::error(line, col, "exactly one `gate` statement is allowed"));
                }
                draft.gate = Some((decl, line, col));
            }
            "branch" => {
                let weight = self.real("branch weight")?;
                self.expect(Tok::Colon, "`:`")?;
                let (form, fl, fc) = self.ident("`ket` or `vector`")?;
                let state = match form.as_str() {
                    "ket" => StateLiteral::Ket(self.string("quoted ket string")?.0),
                    "vector" => StateLiteral::Vector(self.list(Self::complex)?),
                    other => return Err(Diagnostic::error(fl, fc, format!("expected `ket` or `vector`, found `{other}`"))),
                };
                draft.branches.push((BranchDecl { weight, state }, line, col));
            }
            "ctc" => {
                self.key("arm")?;
                let (arm, al, ac) = self.ident("`first` or `last`")?;
                let arm = match arm.as_str() {
                    "first" => CtcArm::First,
                    "last" => CtcArm::Last,
                    other => return Err(Diagnostic::error(al, ac, format!("unknown CTC arm `{other}` (expected first|last)"))),
                };
                if draft.ctc_arm.is_some() {
                    return Err(dup("ctc"));
                }
                draft.ctc_arm = Some(arm);
            }
            "solver" => {
                let block = self.solver_block()?;
                if draft.solver.is_some() {
                    return Err(dup("solver"));
                }
                draft.solver = Some((block, line, col));
            }
            "action" => {
                let action = self.action()?;
                if draft.action.is_some() {
                    return Err(dup("action"));
                }
                draft.action = Some((action, line, col));
            }
            "measure" => {
                self.key("basis")?;
                let (b, bl, bc) = self.ident("measurement basis")?;
                let basis = b
                    .parse::<MeasurementBasis>()
                    .map_err(|_| Diagnostic::error(bl, bc, format!("unknown basis `{b}` (expected computational|diagonal)")))?;
                if draft.measure.is_some() {
                    return Err(dup("measure"));
                }
                draft.measure = Some(basis);
            }
            other => return Err(Diagnostic::error(line, col, format!("unknown keyword `{other}`"))),
        }
        self.end_of_statement()
    }

    fn gate_decl(&mut self) -> PResult<GateDecl> {
        let (name, line, col) = self.ident("gate name or `matrix`")?;
        if name == "matrix" {
            return Ok(GateDecl::Matrix(self.list(Self::complex)?));
        }
        let gate = name
            .parse::<GateName>()
            .map_err(|_| Diagnostic::error(line, col, format!("unknown gate `{name}`")))?;
        let control = if self.peek().tok == Tok::LParen {
            self.bump();
            self.key("control")?;
            let (arm, al, ac) = self.ident("`upper` or `lower`")?;
            let arm = arm
                .parse::<ControlArm>()
                .map_err(|_| Diagnostic::error(al, ac, format!("unknown control arm `{arm}` (expected upper|lower)")))?;
            self.expect(Tok::RParen, "`)`")?;
            Some(arm)
        } else {
            None
        };
        Ok(GateDecl::Named { name: gate, control })
    }

    fn solver_block(&mut self) -> PResult<SolverBlock> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut block = SolverBlock::default();
        if self.peek().tok == Tok::RBrace {
            self.bump();
            return Ok(block);
        }
        loop {
            let (key, line, col) = self.ident("solver setting")?;
            self.expect(Tok::Eq, "`=`")?;
            let dup = || Diagnostic::error(line, col, format!("duplicate solver setting `{key}`"));
            match key.as_str() {
                "tol" => {
                    let v = self.real("tolerance")?;
                    if block.tol.replace(v).is_some() {
                        return Err(dup());
                    }
                }
                "max_iter" => {
                    let v = self.integer("max_iter")?;
                    if block.max_iter.replace(v).is_some() {
                        return Err(dup());
                    }
                }
                "p" => {
                    let v = self.real("depolarizing rate")?;
                    if block.p.replace(v).is_some() {
                        return Err(dup());
                    }
                }
                "damping" => {
                    let v = self.real("damping")?;
                    if block.damping.replace(v).is_some() {
                        return Err(dup());
                    }
                }
                "initial" => {
                    let init = match self.peek().tok.clone() {
                        Tok::Str(_) => InitialDecl::Ket(self.string("initial ket")?.0),
                        _ => {
                            let (v, vl, vc) = self.ident("`in`, `mixed`, `random` or a quoted ket")?;
                            match v.as_str() {
                                "in" => InitialDecl::Input,
                                "mixed" => InitialDecl::Mixed,
                                "random" => InitialDecl::Random,
                                other => return Err(Diagnostic::error(vl, vc, format!("unknown initial state `{other}`"))),
                            }
                        }
                    };
                    if block.initial.replace(init).is_some() {
                        return Err(dup());
                    }
                }
                other => return Err(Diagnostic::error(line, col, format!("unknown solver setting `{other}`"))),
            }
            match self.peek().tok {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RBrace => {
                    self.bump();
                    return Ok(block);
                }
                _ => return Err(self.err_here(format!("expected `,` or `}}`, found {}", self.peek().tok.describe()))),
            }
        }
    }

    fn action(&mut self) -> PResult<Action> {
        let (verb, line, col) = self.ident("action verb")?;
        match verb.as_str() {
            "solve" => Ok(Action::Solve),
            "discriminate" => Ok(Action::Discriminate),
            "correlate" => {
                let semantics = if matches!(self.peek().tok, Tok::Ident(_)) {
                    self.key("semantics")?;
                    let (s, sl, sc) = self.ident("`per-branch` or `mix-inputs`")?;
                    s.parse()
                        .map_err(|_| Diagnostic::error(sl, sc, format!("unknown semantics `{s}` (expected per-branch|mix-inputs)")))?
                } else {
                    MixingSemantics::PerBranch
                };
                Ok(Action::Correlate { semantics })
            }
            "sweep" => {
                self.key("axis")?;
                let (a, al, ac) = self.ident("sweep axis")?;
                let axis = a
                    .parse()
                    .map_err(|_| Diagnostic::error(al, ac, format!("unknown sweep axis `{a}` (expected p|n|damping)")))?;
                self.key("grid")?;
                let grid = self.list(|p| p.real("grid value"))?;
                Ok(Action::Sweep { axis, grid })
            }
            other => Err(Diagnostic::error(line, col, format!("unknown action `{other}`"))),
        }
    }
}

fn ket_dim(spec: &str) -> Option<usize> {
    standard_ket(spec).ok().map(|v| v.len())
}

fn gate_dim(decl: &GateDecl) -> Option<usize> {
    match decl {
        GateDecl::Named { .. } => Some(2),
        GateDecl::Matrix(entries) => {
            let n = (entries.len() as f64).sqrt().round() as usize;
            let d = (n as f64).sqrt().round() as usize;
            (d >= 1 && d * d == n && n * n == entries.len()).then_some(d)
        }
    }
}

fn build_gate(decl: &GateDecl) -> Result<UnitaryGate> {
    match decl {
        GateDecl::Named { name, control } => Ok(standard_gate(*name, control.unwrap_or_default())),
        GateDecl::Matrix(entries) => {
            let n = (entries.len() as f64).sqrt().round() as usize;
            UnitaryGate::new(ComplexMatrix::new(n, n, entries.clone())?, "matrix")
        }
    }
}

fn state_vector(lit: &StateLiteral) -> Result<Vec<C64>> {
    match lit {
        StateLiteral::Ket(s) => standard_ket(s),
        StateLiteral::Vector(v) => Ok(v.clone()),
    }
}

/// Semantic checks that need the whole file.
fn check(draft: &Draft, diags: &mut Vec<Diagnostic>) {
    if draft.name.is_none() {
        diags.push(Diagnostic::error(1, 1, "missing experiment header"));
    }
    let d = match &draft.gate {
        None => {
            diags.push(Diagnostic::error(1, 1, "missing `gate` statement"));
            None
        }
        Some((decl, line, col)) => match gate_dim(decl) {
            None => {
                diags.push(Diagnostic::error(*line, *col, "gate matrix must have (d*d)^2 entries"));
                None
            }
            Some(d) => {
                if let Err(e) = build_gate(decl) {
                    diags.push(Diagnostic::error(*line, *col, format!("invalid gate: {e}")));
                }
                Some(d)
            }
        },
    };

    if draft.branches.is_empty() {
        diags.push(Diagnostic::error(1, 1, "no `branch` statements"));
    }
    let mut len: Option<(usize, usize)> = None;
    for (b, line, col) in &draft.branches {
        if !(b.weight > 0.0) {
            diags.push(Diagnostic::error(*line, *col, format!("branch weight {} must be positive", b.weight)));
        }
        let v = match state_vector(&b.state) {
            Ok(v) => v,
            Err(e) => {
                diags.push(Diagnostic::error(*line, *col, format!("invalid branch state: {e}")));
                continue;
            }
        };
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOL {
            diags.push(Diagnostic::error(*line, *col, format!("branch state has norm {norm}, expected 1")));
        }
        if let Some(d) = d {
            if v.len() % d != 0 {
                diags.push(Diagnostic::error(
                    *line,
                    *col,
                    format!("branch state of dimension {} does not factor over a {d}-dimensional CTC arm", v.len()),
                ));
            }
        }
        match len {
            None => len = Some((v.len(), *line)),
            Some((l, first_line)) if l != v.len() => diags.push(Diagnostic::error(
                *line,
                *col,
                format!("branch state dimension {} differs from {l} (line {first_line})", v.len()),
            )),
            _ => {}
        }
    }
    if !draft.branches.is_empty() {
        let total: f64 = draft.branches.iter().map(|(b, _, _)| b.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            let lines: Vec<String> = draft.branches.iter().map(|(_, l, _)| l.to_string()).collect();
            let (_, line, col) = &draft.branches[0];
            diags.push(Diagnostic::error(
                *line,
                *col,
                format!("branch weights sum to {total}, expected 1 (branches at lines {})", lines.join(", ")),
            ));
        }
    }

    if let Some((block, line, col)) = &draft.solver {
        let mut bad = |msg: String| diags.push(Diagnostic::error(*line, *col, msg));
        if let Some(t) = block.tol {
            if !(t >= crate::solver::MIN_TOL) {
                bad(format!("tol {t} must be at least {:e}", crate::solver::MIN_TOL));
            }
        }
        if block.max_iter == Some(0) {
            bad("max_iter must be positive".into());
        }
        if let Some(p) = block.p {
            if !(0.0..=1.0).contains(&p) {
                bad(format!("p {p} outside [0, 1]"));
            }
        }
        if let Some(a) = block.damping {
            if !(a > 0.0 && a <= 1.0) {
                bad(format!("damping {a} outside (0, 1]"));
            }
        }
        if let (Some(InitialDecl::Ket(k)), Some(d)) = (&block.initial, d) {
            match ket_dim(k) {
                Some(kd) if kd == d => {}
                Some(kd) => bad(format!("initial state has dimension {kd}, CTC arm has {d}")),
                None => bad(format!("invalid initial ket \"{k}\"")),
            }
        }
    }

    if let Some((action, line, col)) = &draft.action {
        match action {
            Action::Sweep { axis, grid } => {
                if grid.is_empty() {
                    diags.push(Diagnostic::error(*line, *col, "sweep grid is empty"));
                }
                for &v in grid {
                    let ok = match axis {
                        SweepAxis::P => (0.0..=1.0).contains(&v),
                        SweepAxis::Damping => v > 0.0 && v <= 1.0,
                        SweepAxis::N => v >= 0.0 && v.fract() == 0.0,
                    };
                    if !ok {
                        diags.push(Diagnostic::error(*line, *col, format!("grid value {v} invalid for axis {}", axis.as_str())));
                    }
                }
                if draft.branches.len() > 1 {
                    diags.push(Diagnostic::error(*line, *col, "sweeps take a single branch"));
                }
            }
            Action::Discriminate if draft.measure == Some(MeasurementBasis::Diagonal) && d != Some(2) => {
                diags.push(Diagnostic::error(*line, *col, "diagonal basis requires a qubit output arm"));
            }
            _ => {}
        }
    }
}

/// Parses a `.ctc` source text. Returns every diagnostic found on failure.
pub fn parse_experiment(source: &str) -> std::result::Result<ExperimentAst, Vec<Diagnostic>> {
    let mut parser = Parser {
        tokens: lex(source),
        pos: 0,
        diagnostics: Vec::new(),
    };
    let mut draft = Draft::default();
    loop {
        while parser.peek().tok == Tok::Newline {
            parser.bump();
        }
        if parser.peek().tok == Tok::Eof {
            break;
        }
        if let Err(d) = parser.statement(&mut draft) {
            parser.diagnostics.push(d);
            parser.skip_line();
        }
    }
    let mut diags = parser.diagnostics;
    check(&draft, &mut diags);
    if diags.iter().any(|d| d.severity == Severity::Error) {
        diags.sort_by_key(|d| (d.line, d.column));
        return Err(diags);
    }
    Ok(ExperimentAst {
        name: draft.name.expect("checked"),
        gate: draft.gate.expect("checked").0,
        branches: draft.branches.into_iter().map(|(b, _, _)| b).collect(),
        ctc_arm: draft.ctc_arm.unwrap_or_default(),
        solver: draft.solver.map(|(s, _, _)| s).unwrap_or_default(),
        action: draft.action.map(|(a, _, _)| a).unwrap_or_default(),
        measure: draft.measure,
    })
}

// ---------------------------------------------------------------- serializer

fn fmt_real(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_complex(z: C64) -> String {
    let sign = if z.im.is_sign_negative() { '-' } else { '+' };
    format!("{:?}{sign}{:?}i", z.re, z.im.abs())
}

fn fmt_complex_list(v: &[C64]) -> String {
    let items: Vec<String> = v.iter().map(|z| fmt_complex(*z)).collect();
    format!("[{}]", items.join(", "))
}

/// Canonical text form; `parse_experiment(&serialize_experiment(ast))`
/// reproduces `ast`.
pub fn serialize_experiment(ast: &ExperimentAst) -> String {
    let mut out = String::new();
    out.push_str(&format!("experiment {}\n", ast.name));
    match &ast.gate {
        GateDecl::Named { name, control: Some(c) } => out.push_str(&format!("gate {name}(control={})\n", c.as_str())),
        GateDecl::Named { name, control: None } => out.push_str(&format!("gate {name}\n")),
        GateDecl::Matrix(m) => out.push_str(&format!("gate matrix {}\n", fmt_complex_list(m))),
    }
    for b in &ast.branches {
        let state = match &b.state {
            StateLiteral::Ket(s) => format!("ket \"{s}\""),
            StateLiteral::Vector(v) => format!("vector {}", fmt_complex_list(v)),
        };
        out.push_str(&format!("branch {}: {state}\n", fmt_real(b.weight)));
    }
    out.push_str(match ast.ctc_arm {
        CtcArm::First => "ctc arm=first\n",
        CtcArm::Last => "ctc arm=last\n",
    });
    if !ast.solver.is_empty() {
        let s = &ast.solver;
        let mut parts = Vec::new();
        if let Some(v) = s.tol {
            parts.push(format!("tol={}", fmt_real(v)));
        }
        if let Some(v) = s.max_iter {
            parts.push(format!("max_iter={v}"));
        }
        if let Some(v) = s.p {
            parts.push(format!("p={}", fmt_real(v)));
        }
        if let Some(v) = s.damping {
            parts.push(format!("damping={}", fmt_real(v)));
        }
        if let Some(init) = &s.initial {
            parts.push(match init {
                InitialDecl::Input => "initial=in".to_string(),
                InitialDecl::Mixed => "initial=mixed".to_string(),
                InitialDecl::Random => "initial=random".to_string(),
                InitialDecl::Ket(k) => format!("initial=\"{k}\""),
            });
        }
        out.push_str(&format!("solver {{ {} }}\n", parts.join(", ")));
    }
    match &ast.action {
        Action::Solve => out.push_str("action solve\n"),
        Action::Discriminate => out.push_str("action discriminate\n"),
        Action::Correlate { semantics } => out.push_str(&format!("action correlate semantics={}\n", semantics.as_str())),
        Action::Sweep { axis, grid } => {
            let g: Vec<String> = grid.iter().map(|v| fmt_real(*v)).collect();
            out.push_str(&format!("action sweep axis={} grid=[{}]\n", axis.as_str(), g.join(", ")));
        }
    }
    if let Some(b) = ast.measure {
        out.push_str(&format!("measure basis={}\n", b.as_str()));
    }
    out
}

// ---------------------------------------------------------------- compilation

/// An experiment ready to run: validated gate, ensemble and solver options.
#[derive(Debug, Clone)]
pub struct CompiledExperiment {
    pub name: String,
    pub gate: UnitaryGate,
    /// The ensemble actually evolved. For discrimination of untagged
    /// candidates this already carries the tag register.
    pub ensemble: EnsembleSpec,
    pub options: SolverOptions,
    pub action: Action,
    pub basis: MeasurementBasis,
}

impl CompiledExperiment {
    /// CTC-bound marginal of the ensemble-averaged input.
    pub fn ctc_input(&self) -> Result<DensityMatrix> {
        let (da, db) = self.ensemble.dims();
        let m = crate::numerics::partial_trace(self.ensemble.mixed_input()?.matrix(), (da, db), crate::numerics::Keep::B)?;
        DensityMatrix::new(m.hermitian_part())
    }
}

fn reorder_ctc_first(v: &[C64], d_ctc: usize) -> Vec<C64> {
    let d_kept = v.len() / d_ctc;
    let mut out = vec![C64::new(0.0, 0.0); v.len()];
    for b in 0..d_ctc {
        for a in 0..d_kept {
            out[a * d_ctc + b] = v[b * d_kept + a];
        }
    }
    out
}

/// Turns a parsed experiment into runnable pieces. `seed` resolves
/// `initial=random`.
pub fn compile(ast: &ExperimentAst, seed: Seed) -> Result<CompiledExperiment> {
    let gate = build_gate(&ast.gate)?;
    let d = gate_dim(&ast.gate).ok_or_else(|| CtcError::DimensionMismatch("gate matrix size".into()))?;
    let total: f64 = ast.branches.iter().map(|b| b.weight).sum();
    let mut branches = Vec::with_capacity(ast.branches.len());
    for b in &ast.branches {
        let mut v = state_vector(&b.state)?;
        if v.len() % d != 0 {
            return Err(CtcError::DimensionMismatch(format!("branch of dimension {} for CTC arm {d}", v.len())));
        }
        if ast.ctc_arm == CtcArm::First {
            v = reorder_ctc_first(&v, d);
        }
        let dims = (v.len() / d, d);
        branches.push(Branch {
            weight: b.weight / total,
            state: BipartiteState::new(v, dims)?,
        });
    }

    let untagged = branches.first().is_some_and(|b| b.state.dims().0 == 1);
    if ast.action == Action::Discriminate && untagged {
        let k = branches.len();
        for (i, b) in branches.iter_mut().enumerate() {
            let mut tag = vec![C64::new(0.0, 0.0); k];
            tag[i] = C64::new(1.0, 0.0);
            b.state = BipartiteState::product(&tag, b.state.vector())?;
        }
    }
    let ensemble = EnsembleSpec::new(branches)?;

    let s = &ast.solver;
    let defaults = SolverOptions::default();
    let initial = match &s.initial {
        None | Some(InitialDecl::Input) => InitialState::Input,
        Some(InitialDecl::Mixed) => InitialState::MaximallyMixed,
        Some(InitialDecl::Random) => InitialState::State(DensityMatrix::new(Sampler::new(seed).pure(d))?),
        Some(InitialDecl::Ket(k)) => InitialState::State(DensityMatrix::from_ket(&standard_ket(k)?)?),
    };
    let options = SolverOptions {
        tol: s.tol.unwrap_or(defaults.tol),
        max_iter: s.max_iter.unwrap_or(defaults.max_iter),
        p: s.p.unwrap_or(defaults.p),
        damping: s.damping.unwrap_or(defaults.damping),
        initial,
        keep_iterates: false,
    };
    options.validate()?;
    Ok(CompiledExperiment {
        name: ast.name.clone(),
        gate,
        ensemble,
        options,
        action: ast.action.clone(),
        basis: ast.measure.unwrap_or_default(),
    })
}
