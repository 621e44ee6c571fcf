//! The `.geo` scene language.
//!
//! A scene file is line oriented. Each non-blank line starts with a keyword;
//! `#` starts a comment that runs to the end of the line.
//!
//! ```text
//! point A                         # one or more point names
//! circle w center O               # circle, optionally centred on a point
//! segment A B
//! line A B
//! fix A 0 0                       # pin a point (field units)
//! scale 1 4 cm                    # 1 field unit = 4 cm
//! constraint equal length(A,B) length(B,C)
//! constraint equal length(A,B) 5  # literal in problem units
//! constraint angle A B C 60 weight 2
//! constraint on P seg(A,B)
//! target angle A B C
//! expect 60 tol 0.5
//! ```
//!
//! Quantities usable by `equal` and `less` are `length(P,Q)`,
//! `angle(P,Q,R)`, `area(P,Q,R,...)`, `radius(c)` and `dist(P, e)` where
//! `e` is a circle name, `seg(P,Q)` or `line(P,Q)`. Angles are written in
//! degrees.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

/// 1-based source line. Ignored by equality so that re-parsed scenes compare
/// equal to the original regardless of layout.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct SourceLine(pub usize);

impl PartialEq for SourceLine {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ElementDecl {
    Point { name: String },
    Circle { name: String, center: Option<String> },
    Segment { a: String, b: String },
    Line { a: String, b: String },
}

impl ElementDecl {
    /// Identifier used in diagnostics and reports.
    pub fn label(&self) -> String {
        match self {
            ElementDecl::Point { name } | ElementDecl::Circle { name, .. } => name.clone(),
            ElementDecl::Segment { a, b } => format!("seg({a},{b})"),
            ElementDecl::Line { a, b } => format!("line({a},{b})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Equal,
    Less,
    Angle,
    Area,
    Parallel,
    Perpendicular,
    Order,
    On,
    Inside,
    Convex,
    Crowd,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 11] = [
        ConstraintKind::Equal,
        ConstraintKind::Less,
        ConstraintKind::Angle,
        ConstraintKind::Area,
        ConstraintKind::Parallel,
        ConstraintKind::Perpendicular,
        ConstraintKind::Order,
        ConstraintKind::On,
        ConstraintKind::Inside,
        ConstraintKind::Convex,
        ConstraintKind::Crowd,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            ConstraintKind::Equal => "equal",
            ConstraintKind::Less => "less",
            ConstraintKind::Angle => "angle",
            ConstraintKind::Area => "area",
            ConstraintKind::Parallel => "parallel",
            ConstraintKind::Perpendicular => "perpendicular",
            ConstraintKind::Order => "order",
            ConstraintKind::On => "on",
            ConstraintKind::Inside => "inside",
            ConstraintKind::Convex => "convex",
            ConstraintKind::Crowd => "crowd",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.keyword() == s)
    }
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// An element referenced by `on` and `dist`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ElementRef {
    Circle(String),
    Segment(String, String),
    Line(String, String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Quantity {
    Length(String, String),
    Angle(String, String, String),
    Area(Vec<String>),
    Radius(String),
    Distance(String, ElementRef),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dimension {
    Length,
    Angle,
    Area,
}

impl Quantity {
    pub fn dimension(&self) -> Dimension {
        match self {
            Quantity::Length(..) | Quantity::Radius(_) | Quantity::Distance(..) => {
                Dimension::Length
            }
            Quantity::Angle(..) => Dimension::Angle,
            Quantity::Area(_) => Dimension::Area,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Arg {
    Name(String),
    Segment(String, String),
    Line(String, String),
    Quantity(Quantity),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintDecl {
    pub kind: ConstraintKind,
    pub args: Vec<Arg>,
    /// Degrees for angles, problem units (or their square) otherwise. For
    /// `crowd` this is the separation distance in field units.
    pub value: Option<f64>,
    pub weight: f64,
    pub line: SourceLine,
}

impl ConstraintDecl {
    pub fn new(kind: ConstraintKind, args: Vec<Arg>, value: Option<f64>) -> Self {
        Self {
            kind,
            args,
            value,
            weight: 1.0,
            line: SourceLine::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Angle,
    Length,
    Area,
    Radius,
}

impl TargetKind {
    pub fn keyword(self) -> &'static str {
        match self {
            TargetKind::Angle => "angle",
            TargetKind::Length => "length",
            TargetKind::Area => "area",
            TargetKind::Radius => "radius",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetDecl {
    pub kind: TargetKind,
    pub args: Vec<String>,
    pub line: SourceLine,
}

/// `field_length` field units correspond to `value` problem units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub field_length: f64,
    pub value: f64,
    pub unit: String,
}

impl Scale {
    /// Problem units per field unit.
    pub fn factor(&self) -> f64 {
        self.value / self.field_length
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub value: f64,
    pub tol: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub elements: Vec<ElementDecl>,
    pub constraints: Vec<ConstraintDecl>,
    pub targets: Vec<TargetDecl>,
    pub fixes: BTreeMap<String, (f64, f64)>,
    pub scale: Option<Scale>,
    pub expected: Option<Expectation>,
}

impl SceneSpec {
    pub fn points(&self) -> impl Iterator<Item = &str> {
        self.elements.iter().filter_map(|e| match e {
            ElementDecl::Point { name } => Some(name.as_str()),
            _ => None,
        })
    }

    pub fn scale_factor(&self) -> f64 {
        self.scale.as_ref().map_or(1.0, Scale::factor)
    }

    /// Whether any constraint describes a polygon, which makes a collinear
    /// layout a collapse rather than a legitimate solution.
    pub fn has_polygon_constraint(&self) -> bool {
        self.constraints.iter().any(|c| {
            matches!(
                c.kind,
                ConstraintKind::Area
                    | ConstraintKind::Order
                    | ConstraintKind::Convex
                    | ConstraintKind::Inside
            )
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosticKind {
    Syntax,
    UnknownName,
    Arity,
    DuplicateName,
    Unconstrained,
    Unsolvable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub kind: DiagnosticKind,
    /// 1-based; 0 when the item did not come from source text.
    pub line: usize,
    /// 1-based column of the offending token, 0 if unknown.
    pub column: usize,
    pub message: String,
}

impl Diagnostic {
    fn error(kind: DiagnosticKind, line: usize, column: usize, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            kind,
            line,
            column,
            message: message.into(),
        }
    }

    fn warning(kind: DiagnosticKind, line: usize, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            kind,
            line,
            column: 0,
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }

    /// `<file>:<line>: <severity>: <message>`
    pub fn render(&self, file: &str) -> String {
        format!("{file}:{}: {}: {}", self.line, self.severity, self.message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.severity, self.message)
    }
}

// ---------------------------------------------------------------------------
// Lexing
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Result<Vec<Token<'_>>, (usize, String)> {
    let mut tokens = Vec::new();
    let mut depth = 0i32;
    let mut start: Option<usize> = None;
    for (i, ch) in line.char_indices() {
        match ch {
            '(' => {
                depth += 1;
                start.get_or_insert(i);
            }
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err((i + 1, "unbalanced ')'".into()));
                }
            }
            c if c.is_whitespace() && depth == 0 => {
                if let Some(s) = start.take() {
                    tokens.push(Token {
                        text: &line[s..i],
                        column: s + 1,
                    });
                }
            }
            _ => {
                start.get_or_insert(i);
            }
        }
    }
    if depth != 0 {
        return Err((start.map_or(1, |s| s + 1), "unbalanced '('".into()));
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: &line[s..],
            column: s + 1,
        });
    }
    Ok(tokens)
}

fn is_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '\'')
}

fn parse_number(s: &str) -> Option<f64> {
    let first = s.chars().next()?;
    if !(first.is_ascii_digit() || matches!(first, '-' | '+' | '.')) {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Splits `name(a, b, c)` into `("name", ["a", "b", "c"])`.
fn split_call(s: &str) -> Option<(&str, Vec<&str>)> {
    let open = s.find('(')?;
    if !s.ends_with(')') {
        return None;
    }
    let head = &s[..open];
    let inner = &s[open + 1..s.len() - 1];
    let mut parts = Vec::new();
    let mut depth = 0;
    let mut from = 0;
    for (i, ch) in inner.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(inner[from..i].trim());
                from = i + 1;
            }
            _ => {}
        }
    }
    let last = inner[from..].trim();
    if !(parts.is_empty() && last.is_empty()) {
        parts.push(last);
    }
    Some((head, parts))
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct LineParser<'a> {
    line: usize,
    tokens: Vec<Token<'a>>,
}

type LineResult<T> = Result<T, Diagnostic>;

impl<'a> LineParser<'a> {
    fn err(&self, column: usize, msg: impl Into<String>) -> Diagnostic {
        Diagnostic::error(DiagnosticKind::Syntax, self.line, column, msg)
    }

    fn name_at(&self, i: usize) -> LineResult<String> {
        let t = &self.tokens[i];
        if is_name(t.text) {
            Ok(t.text.to_string())
        } else {
            Err(self.err(t.column, format!("expected a name, found '{}'", t.text)))
        }
    }

    fn number_at(&self, i: usize) -> LineResult<f64> {
        let t = self
            .tokens
            .get(i)
            .ok_or_else(|| self.err(0, "missing number"))?;
        parse_number(t.text)
            .ok_or_else(|| self.err(t.column, format!("expected a number, found '{}'", t.text)))
    }

    fn expect_len(&self, n: usize, usage: &str) -> LineResult<()> {
        if self.tokens.len() != n {
            let col = self.tokens.get(n).map_or(self.tokens[0].column, |t| t.column);
            return Err(self.err(col, format!("usage: {usage}")));
        }
        Ok(())
    }

    fn element_ref(&self, s: &str, column: usize) -> LineResult<ElementRef> {
        if is_name(s) {
            return Ok(ElementRef::Circle(s.to_string()));
        }
        match self.arg(s, column)? {
            Arg::Segment(a, b) => Ok(ElementRef::Segment(a, b)),
            Arg::Line(a, b) => Ok(ElementRef::Line(a, b)),
            _ => Err(self.err(column, format!("expected an element, found '{s}'"))),
        }
    }

    fn names(&self, parts: &[&str], column: usize) -> LineResult<Vec<String>> {
        parts
            .iter()
            .map(|p| {
                if is_name(p) {
                    Ok(p.to_string())
                } else {
                    Err(self.err(column, format!("expected a point name, found '{p}'")))
                }
            })
            .collect()
    }

    fn arg(&self, s: &str, column: usize) -> LineResult<Arg> {
        if is_name(s) {
            return Ok(Arg::Name(s.to_string()));
        }
        let (head, parts) =
            split_call(s).ok_or_else(|| self.err(column, format!("cannot parse argument '{s}'")))?;
        let arity = |n: usize| -> LineResult<()> {
            if parts.len() == n {
                Ok(())
            } else {
                Err(Diagnostic::error(
                    DiagnosticKind::Arity,
                    self.line,
                    column,
                    format!("{head}() takes {n} arguments, got {}", parts.len()),
                ))
            }
        };
        match head {
            "seg" | "segment" => {
                arity(2)?;
                let n = self.names(&parts, column)?;
                Ok(Arg::Segment(n[0].clone(), n[1].clone()))
            }
            "line" => {
                arity(2)?;
                let n = self.names(&parts, column)?;
                Ok(Arg::Line(n[0].clone(), n[1].clone()))
            }
            "length" => {
                arity(2)?;
                let n = self.names(&parts, column)?;
                Ok(Arg::Quantity(Quantity::Length(n[0].clone(), n[1].clone())))
            }
            "angle" => {
                arity(3)?;
                let n = self.names(&parts, column)?;
                Ok(Arg::Quantity(Quantity::Angle(
                    n[0].clone(),
                    n[1].clone(),
                    n[2].clone(),
                )))
            }
            "area" => {
                if parts.len() < 3 {
                    return Err(Diagnostic::error(
                        DiagnosticKind::Arity,
                        self.line,
                        column,
                        "area() takes at least 3 points",
                    ));
                }
                Ok(Arg::Quantity(Quantity::Area(self.names(&parts, column)?)))
            }
            "radius" => {
                arity(1)?;
                let n = self.names(&parts, column)?;
                Ok(Arg::Quantity(Quantity::Radius(n[0].clone())))
            }
            "dist" => {
                arity(2)?;
                let p = self.names(&parts[..1], column)?.remove(0);
                let e = self.element_ref(parts[1], column)?;
                Ok(Arg::Quantity(Quantity::Distance(p, e)))
            }
            _ => Err(self.err(column, format!("unknown function '{head}'"))),
        }
    }
}

/// Parses `.geo` text. On failure every error found is returned, each with
/// its source line.
pub fn parse_spec(text: &str) -> Result<SceneSpec, Vec<Diagnostic>> {
    let mut spec = SceneSpec::default();
    let mut errors = Vec::new();
    let mut fix_lines: HashMap<String, usize> = HashMap::new();
    let mut element_lines: Vec<usize> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let tokens = match tokenize(content) {
            Ok(t) => t,
            Err((col, msg)) => {
                errors.push(Diagnostic::error(DiagnosticKind::Syntax, line_no, col, msg));
                continue;
            }
        };
        if tokens.is_empty() {
            continue;
        }
        let p = LineParser {
            line: line_no,
            tokens,
        };
        if let Err(d) = parse_line(&p, &mut spec, &mut fix_lines) {
            errors.push(d);
        }
        element_lines.resize(spec.elements.len(), line_no);
    }

    errors.extend(check(&spec, &fix_lines, &element_lines).into_iter().filter(Diagnostic::is_error));
    if errors.is_empty() {
        Ok(spec)
    } else {
        errors.sort_by_key(|d| (d.line, d.column));
        Err(errors)
    }
}

fn parse_line(
    p: &LineParser<'_>,
    spec: &mut SceneSpec,
    fix_lines: &mut HashMap<String, usize>,
) -> LineResult<()> {
    let keyword = p.tokens[0].text;
    let n = p.tokens.len();
    match keyword {
        "point" => {
            if n < 2 {
                return Err(p.err(p.tokens[0].column, "usage: point <Name>..."));
            }
            for i in 1..n {
                spec.elements.push(ElementDecl::Point { name: p.name_at(i)? });
            }
        }
        "circle" => {
            let center = match n {
                2 => None,
                4 if p.tokens[2].text == "center" => Some(p.name_at(3)?),
                _ => {
                    return Err(p.err(p.tokens[0].column, "usage: circle <Name> [center <P>]"))
                }
            };
            spec.elements.push(ElementDecl::Circle {
                name: p.name_at(1)?,
                center,
            });
        }
        "segment" | "line" => {
            p.expect_len(3, &format!("{keyword} <P> <Q>"))?;
            let (a, b) = (p.name_at(1)?, p.name_at(2)?);
            spec.elements.push(if keyword == "segment" {
                ElementDecl::Segment { a, b }
            } else {
                ElementDecl::Line { a, b }
            });
        }
        "fix" => {
            p.expect_len(4, "fix <P> <x> <y>")?;
            let name = p.name_at(1)?;
            let xy = (p.number_at(2)?, p.number_at(3)?);
            if spec.fixes.insert(name.clone(), xy).is_some() {
                return Err(Diagnostic::error(
                    DiagnosticKind::DuplicateName,
                    p.line,
                    p.tokens[1].column,
                    format!("point {name} is fixed twice"),
                ));
            }
            fix_lines.insert(name, p.line);
        }
        "scale" => {
            p.expect_len(4, "scale <field-length> <value> <unit>")?;
            let field_length = p.number_at(1)?;
            let value = p.number_at(2)?;
            if field_length <= 0.0 || value <= 0.0 {
                return Err(p.err(p.tokens[1].column, "scale lengths must be positive"));
            }
            if spec.scale.is_some() {
                return Err(p.err(p.tokens[0].column, "at most one scale directive is allowed"));
            }
            spec.scale = Some(Scale {
                field_length,
                value,
                unit: p.tokens[3].text.to_string(),
            });
        }
        "expect" => {
            let value = p.number_at(1)?;
            let tol = match n {
                2 => None,
                4 if p.tokens[2].text == "tol" => {
                    let t = p.number_at(3)?;
                    if t < 0.0 {
                        return Err(p.err(p.tokens[3].column, "tolerance must be non-negative"));
                    }
                    Some(t)
                }
                _ => return Err(p.err(p.tokens[0].column, "usage: expect <value> [tol <t>]")),
            };
            if spec.expected.is_some() {
                return Err(p.err(p.tokens[0].column, "at most one expect directive is allowed"));
            }
            spec.expected = Some(Expectation { value, tol });
        }
        "target" => {
            if n < 3 {
                return Err(p.err(p.tokens[0].column, "usage: target <kind> <args...>"));
            }
            let kind = match p.tokens[1].text {
                "angle" => TargetKind::Angle,
                "length" => TargetKind::Length,
                "area" => TargetKind::Area,
                "radius" => TargetKind::Radius,
                other => {
                    return Err(p.err(p.tokens[1].column, format!("unknown target kind '{other}'")))
                }
            };
            let args = (2..n).map(|i| p.name_at(i)).collect::<LineResult<Vec<_>>>()?;
            spec.targets.push(TargetDecl {
                kind,
                args,
                line: SourceLine(p.line),
            });
        }
        "constraint" => spec.constraints.push(parse_constraint(p)?),
        other => {
            return Err(p.err(p.tokens[0].column, format!("unknown keyword '{other}'")));
        }
    }
    Ok(())
}

fn parse_constraint(p: &LineParser<'_>) -> LineResult<ConstraintDecl> {
    if p.tokens.len() < 2 {
        return Err(p.err(p.tokens[0].column, "usage: constraint <kind> <args...> [<value>]"));
    }
    let kind = ConstraintKind::from_keyword(p.tokens[1].text).ok_or_else(|| {
        p.err(
            p.tokens[1].column,
            format!("unknown constraint kind '{}'", p.tokens[1].text),
        )
    })?;
    let mut end = p.tokens.len();
    let mut weight = 1.0;
    if end >= 4 && p.tokens[end - 2].text == "weight" {
        weight = p.number_at(end - 1)?;
        if weight <= 0.0 {
            return Err(p.err(p.tokens[end - 1].column, "weight must be positive"));
        }
        end -= 2;
    }
    let mut args = Vec::new();
    let mut value = None;
    for i in 2..end {
        let t = &p.tokens[i];
        if let Some(v) = parse_number(t.text) {
            if i + 1 != end {
                return Err(p.err(t.column, "a value may only appear last"));
            }
            value = Some(v);
        } else {
            args.push(p.arg(t.text, t.column)?);
        }
    }
    Ok(ConstraintDecl {
        kind,
        args,
        value,
        weight,
        line: SourceLine(p.line),
    })
}

// ---------------------------------------------------------------------------
// Semantic checks
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq)]
enum NameKind {
    Point,
    Circle,
}

struct Checker<'a> {
    names: HashMap<&'a str, NameKind>,
    used: HashSet<String>,
    out: Vec<Diagnostic>,
}

impl<'a> Checker<'a> {
    fn arity(&mut self, line: usize, msg: impl Into<String>) {
        self.out
            .push(Diagnostic::error(DiagnosticKind::Arity, line, 0, msg));
    }

    fn expect(&mut self, name: &str, want: NameKind, line: usize) {
        self.used.insert(name.to_string());
        match self.names.get(name) {
            None => self.out.push(Diagnostic::error(
                DiagnosticKind::UnknownName,
                line,
                0,
                format!("unknown name {name}"),
            )),
            Some(&k) if k != want => {
                let (w, f) = match want {
                    NameKind::Point => ("point", "circle"),
                    NameKind::Circle => ("circle", "point"),
                };
                self.arity(line, format!("expected a {w}, but {name} is a {f}"));
            }
            Some(_) => {}
        }
    }

    fn points(&mut self, names: &[String], line: usize) {
        for n in names {
            self.expect(n, NameKind::Point, line);
        }
    }

    fn element_ref(&mut self, e: &ElementRef, line: usize) {
        match e {
            ElementRef::Circle(c) => self.expect(c, NameKind::Circle, line),
            ElementRef::Segment(a, b) | ElementRef::Line(a, b) => self.pair(a, b, line),
        }
    }

    fn pair(&mut self, a: &str, b: &str, line: usize) {
        self.expect(a, NameKind::Point, line);
        self.expect(b, NameKind::Point, line);
        if a == b {
            self.arity(line, format!("segment/line endpoints must differ ({a})"));
        }
    }

    fn quantity(&mut self, q: &Quantity, line: usize) {
        match q {
            Quantity::Length(a, b) => self.points(&[a.clone(), b.clone()], line),
            Quantity::Angle(a, b, c) => self.points(&[a.clone(), b.clone(), c.clone()], line),
            Quantity::Area(ps) => self.points(ps, line),
            Quantity::Radius(c) => self.expect(c, NameKind::Circle, line),
            Quantity::Distance(p, e) => {
                self.expect(p, NameKind::Point, line);
                self.element_ref(e, line);
            }
        }
    }

    /// Collects plain point names, reporting anything else as an arity error.
    fn point_args(&mut self, c: &ConstraintDecl) -> Vec<String> {
        let line = c.line.0;
        let mut out = Vec::new();
        for a in &c.args {
            match a {
                Arg::Name(n) => {
                    self.expect(n, NameKind::Point, line);
                    out.push(n.clone());
                }
                _ => self.arity(line, format!("{} takes point names only", c.kind)),
            }
        }
        out
    }

    fn constraint(&mut self, c: &ConstraintDecl) {
        let line = c.line.0;
        let k = c.kind;
        if !(c.weight > 0.0 && c.weight.is_finite()) {
            self.arity(line, "weight must be positive");
        }
        let value_rule = |this: &mut Self, required: bool| match (required, c.value) {
            (true, None) => this.arity(line, format!("{k} requires a value")),
            (false, Some(_)) => this.arity(line, format!("{k} takes no value")),
            _ => {}
        };
        match k {
            ConstraintKind::Equal | ConstraintKind::Less => {
                let mut dims = Vec::new();
                for a in &c.args {
                    match a {
                        Arg::Quantity(q) => {
                            self.quantity(q, line);
                            dims.push(q.dimension());
                        }
                        _ => self.arity(line, format!("{k} compares quantities such as length(A,B)")),
                    }
                }
                let want = if c.value.is_some() { 1 } else { 2 };
                if c.args.len() != want {
                    self.arity(
                        line,
                        format!("{k} takes two quantities, or one quantity and a value"),
                    );
                } else if dims.len() == 2 && dims[0] != dims[1] {
                    self.arity(line, format!("{k} compares quantities of different dimension"));
                }
            }
            ConstraintKind::Angle => {
                let pts = self.point_args(c);
                if pts.len() != 3 {
                    self.arity(line, "angle takes exactly 3 points");
                }
                value_rule(self, true);
            }
            ConstraintKind::Area => {
                if self.point_args(c).len() < 3 {
                    self.arity(line, "area takes at least 3 points");
                }
                value_rule(self, true);
            }
            ConstraintKind::Parallel | ConstraintKind::Perpendicular => {
                let pts = self.point_args(c);
                if pts.len() != 4 {
                    self.arity(line, format!("{k} takes exactly 4 points"));
                } else if pts[0] == pts[1] || pts[2] == pts[3] {
                    self.arity(line, format!("{k} needs two distinct points per direction"));
                }
                value_rule(self, false);
            }
            ConstraintKind::Order | ConstraintKind::Convex => {
                if self.point_args(c).len() < 3 {
                    self.arity(line, format!("{k} takes at least 3 points"));
                }
                value_rule(self, false);
            }
            ConstraintKind::Inside => {
                if self.point_args(c).len() < 4 {
                    self.arity(line, "inside takes a point and at least 3 polygon vertices");
                }
                value_rule(self, false);
            }
            ConstraintKind::Crowd => {
                if self.point_args(c).len() < 2 {
                    self.arity(line, "crowd takes at least 2 points");
                }
                if matches!(c.value, Some(t) if t <= 0.0) {
                    self.arity(line, "crowd distance must be positive");
                }
            }
            ConstraintKind::On => {
                if c.args.len() != 2 {
                    self.arity(line, "on takes a point and an element");
                    return;
                }
                match &c.args[0] {
                    Arg::Name(n) => self.expect(n, NameKind::Point, line),
                    _ => self.arity(line, "on: first argument must be a point"),
                }
                match &c.args[1] {
                    Arg::Name(n) => self.expect(n, NameKind::Circle, line),
                    Arg::Segment(a, b) | Arg::Line(a, b) => self.pair(a, b, line),
                    Arg::Quantity(_) => self.arity(line, "on: second argument must be an element"),
                }
                value_rule(self, false);
            }
        }
    }

    fn target(&mut self, t: &TargetDecl) {
        let line = t.line.0;
        let n = t.args.len();
        match t.kind {
            TargetKind::Angle | TargetKind::Length | TargetKind::Area => {
                let ok = match t.kind {
                    TargetKind::Angle => n == 3,
                    TargetKind::Length => n == 2,
                    _ => n >= 3,
                };
                if !ok {
                    self.arity(line, format!("target {} has wrong arity ({n})", t.kind.keyword()));
                }
                self.points(&t.args, line);
            }
            TargetKind::Radius => {
                if n != 1 {
                    self.arity(line, "target radius takes one circle");
                }
                for a in &t.args {
                    self.expect(a, NameKind::Circle, line);
                }
            }
        }
    }
}

fn check(
    spec: &SceneSpec,
    fix_lines: &HashMap<String, usize>,
    element_lines: &[usize],
) -> Vec<Diagnostic> {
    let line_of = |i: usize| element_lines.get(i).copied().unwrap_or(0);
    let mut ck = Checker {
        names: HashMap::new(),
        used: HashSet::new(),
        out: Vec::new(),
    };

    let mut drawn: HashSet<(String, String, bool)> = HashSet::new();
    for (i, e) in spec.elements.iter().enumerate() {
        match e {
            ElementDecl::Point { name } | ElementDecl::Circle { name, .. } => {
                let kind = if matches!(e, ElementDecl::Point { .. }) {
                    NameKind::Point
                } else {
                    NameKind::Circle
                };
                if name.is_empty() || ck.names.insert(name, kind).is_some() {
                    ck.out.push(Diagnostic::error(
                        DiagnosticKind::DuplicateName,
                        line_of(i),
                        0,
                        format!("duplicate element name {name}"),
                    ));
                }
            }
            ElementDecl::Segment { a, b } | ElementDecl::Line { a, b } => {
                let is_seg = matches!(e, ElementDecl::Segment { .. });
                let key = if a <= b {
                    (a.clone(), b.clone(), is_seg)
                } else {
                    (b.clone(), a.clone(), is_seg)
                };
                if !drawn.insert(key) {
                    ck.out.push(Diagnostic::error(
                        DiagnosticKind::DuplicateName,
                        line_of(i),
                        0,
                        format!("duplicate element {}", e.label()),
                    ));
                }
            }
        }
    }
    // Element references are checked after every name is known so that
    // declaration order does not matter.
    for (i, e) in spec.elements.iter().enumerate() {
        match e {
            ElementDecl::Circle {
                center: Some(c), ..
            } => {
                ck.expect(c, NameKind::Point, line_of(i));
                ck.used.remove(c.as_str());
            }
            ElementDecl::Segment { a, b } | ElementDecl::Line { a, b } => {
                ck.pair(a, b, line_of(i));
                ck.used.remove(a.as_str());
                ck.used.remove(b.as_str());
            }
            _ => {}
        }
    }
    for (name, _) in &spec.fixes {
        let line = fix_lines.get(name).copied().unwrap_or(0);
        ck.expect(name, NameKind::Point, line);
        ck.used.remove(name.as_str());
    }
    for c in &spec.constraints {
        ck.constraint(c);
    }
    for t in &spec.targets {
        ck.target(t);
    }

    let only_crowd = spec
        .constraints
        .iter()
        .all(|c| c.kind == ConstraintKind::Crowd);
    if only_crowd && !spec.fixes.is_empty() {
        ck.out.push(Diagnostic::error(
            DiagnosticKind::Unsolvable,
            0,
            0,
            "fixed points in a scene without relational constraints",
        ));
    }

    let mut warnings = Vec::new();
    for e in &spec.elements {
        if let ElementDecl::Point { name } | ElementDecl::Circle { name, .. } = e {
            if !ck.used.contains(name) && !spec.fixes.contains_key(name) {
                warnings.push(Diagnostic::warning(
                    DiagnosticKind::Unconstrained,
                    0,
                    format!("unconstrained element {name}"),
                ));
            }
        }
    }
    ck.out.extend(warnings);
    ck.out
}

/// Every error and warning for `spec`. An empty list means the scene is
/// well formed and every element takes part in some constraint or target.
pub fn validate_spec(spec: &SceneSpec) -> Vec<Diagnostic> {
    check(spec, &HashMap::new(), &[])
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

fn fmt_element_ref(e: &ElementRef) -> String {
    match e {
        ElementRef::Circle(c) => c.clone(),
        ElementRef::Segment(a, b) => format!("seg({a},{b})"),
        ElementRef::Line(a, b) => format!("line({a},{b})"),
    }
}

fn fmt_quantity(q: &Quantity) -> String {
    match q {
        Quantity::Length(a, b) => format!("length({a},{b})"),
        Quantity::Angle(a, b, c) => format!("angle({a},{b},{c})"),
        Quantity::Area(ps) => format!("area({})", ps.join(",")),
        Quantity::Radius(c) => format!("radius({c})"),
        Quantity::Distance(p, e) => format!("dist({p},{})", fmt_element_ref(e)),
    }
}

fn fmt_arg(a: &Arg) -> String {
    match a {
        Arg::Name(n) => n.clone(),
        Arg::Segment(a, b) => format!("seg({a},{b})"),
        Arg::Line(a, b) => format!("line({a},{b})"),
        Arg::Quantity(q) => fmt_quantity(q),
    }
}

/// Writes `spec` back to `.geo` text; parsing the output yields an equal
/// [`SceneSpec`].
pub fn serialize_spec(spec: &SceneSpec) -> String {
    let mut out = String::new();
    for e in &spec.elements {
        let _ = match e {
            ElementDecl::Point { name } => writeln!(out, "point {name}"),
            ElementDecl::Circle { name, center: None } => writeln!(out, "circle {name}"),
            ElementDecl::Circle {
                name,
                center: Some(c),
            } => writeln!(out, "circle {name} center {c}"),
            ElementDecl::Segment { a, b } => writeln!(out, "segment {a} {b}"),
            ElementDecl::Line { a, b } => writeln!(out, "line {a} {b}"),
        };
    }
    for (name, (x, y)) in &spec.fixes {
        let _ = writeln!(out, "fix {name} {x} {y}");
    }
    if let Some(s) = &spec.scale {
        let _ = writeln!(out, "scale {} {} {}", s.field_length, s.value, s.unit);
    }
    for c in &spec.constraints {
        out.push_str("constraint ");
        out.push_str(c.kind.keyword());
        for a in &c.args {
            out.push(' ');
            out.push_str(&fmt_arg(a));
        }
        if let Some(v) = c.value {
            let _ = write!(out, " {v}");
        }
        if c.weight != 1.0 {
            let _ = write!(out, " weight {}", c.weight);
        }
        out.push('\n');
    }
    for t in &spec.targets {
        let _ = writeln!(out, "target {} {}", t.kind.keyword(), t.args.join(" "));
    }
    if let Some(e) = &spec.expected {
        let _ = match e.tol {
            Some(t) => writeln!(out, "expect {} tol {t}", e.value),
            None => writeln!(out, "expect {}", e.value),
        };
    }
    out
}
