//! Schema text parser.
//!
//! One definition per line, `#` starts a comment. Sugar expands during
//! parsing (`Unit`, `Scal`, `Vector[n]`, `Enum[n]`, `Bool`, `Option[T]`), and
//! parameterized definitions -- including the built-in recursive
//! `List[T] = Sum[Unit, Prod[T, List[T]]]` -- are monomorphized into named
//! instances, one per distinct argument list.

use std::collections::{BTreeMap, BTreeSet};

use super::{SchemaEnv, TypeExpr};
use crate::error::SchemaError;

const RESERVED: &[&str] = &[
    "Tensor", "Vector", "Scal", "Unit", "Sum", "Prod", "MSet", "Enum", "Bool", "Option", "List",
];

/// Parse a full schema into an environment, expanding sugar, monomorphizing
/// parameterized definitions, and checking the recursion guard.
pub fn parse_schema(text: &str) -> Result<SchemaEnv, SchemaError> {
    let mut raw_defs: Vec<RawDef> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut tokens = Lexer::new(line, line_no).lex()?;
        if tokens.is_empty() {
            continue;
        }
        raw_defs.push(parse_def(&mut tokens, line_no)?);
    }

    let mut builder = Builder::new();
    for def in &raw_defs {
        if RESERVED.contains(&def.name.as_str())
            || builder.declared.contains(&def.name)
            || builder.templates.contains_key(&def.name)
        {
            return Err(SchemaError::DuplicateDefinition {
                line: def.line,
                name: def.name.clone(),
            });
        }
        match &def.params {
            Some(params) => {
                builder
                    .templates
                    .insert(def.name.clone(), (params.clone(), def.body.clone()));
            }
            None => {
                builder.declared.insert(def.name.clone());
            }
        }
    }
    for def in &raw_defs {
        if def.params.is_none() {
            let resolved = builder.resolve(&def.body, &BTreeMap::new())?;
            builder.env.insert(def.name.clone(), resolved);
        }
    }
    builder.env.check_guard()?;
    Ok(builder.env)
}

impl SchemaEnv {
    /// Parse a single type expression in the context of this environment.
    /// May add monomorphized instances (e.g. of `List`) to the environment.
    pub fn parse_type(&mut self, text: &str) -> Result<TypeExpr, SchemaError> {
        let mut tokens = Lexer::new(text, 1).lex()?;
        let raw = parse_type(&mut tokens)?;
        tokens.expect_end()?;
        let mut builder = Builder::new();
        builder.env = self.clone();
        builder.declared = self.definitions().map(|(n, _)| n.clone()).collect();
        let t = builder.resolve(&raw, &BTreeMap::new())?;
        builder.env.check_guard()?;
        *self = builder.env;
        Ok(t)
    }
}

#[derive(Debug, Clone)]
enum Raw {
    Tensor(Vec<usize>),
    Sum(Vec<Raw>),
    Prod(Vec<Raw>),
    MSet(Box<Raw>),
    Apply {
        name: String,
        args: Vec<Raw>,
        line: usize,
    },
    Name {
        name: String,
        line: usize,
    },
}

#[derive(Debug)]
struct RawDef {
    name: String,
    params: Option<Vec<String>>,
    body: Raw,
    line: usize,
}

struct Builder {
    env: SchemaEnv,
    templates: BTreeMap<String, (Vec<String>, Raw)>,
    declared: BTreeSet<String>,
}

impl Builder {
    fn new() -> Self {
        let mut templates = BTreeMap::new();
        // built-in recursive list: List[t] = Sum[Unit, Prod[t, List[t]]]
        let elem = "#elem".to_string();
        templates.insert(
            "List".to_string(),
            (
                vec![elem.clone()],
                Raw::Sum(vec![
                    Raw::Tensor(vec![0]),
                    Raw::Prod(vec![
                        Raw::Name {
                            name: elem.clone(),
                            line: 0,
                        },
                        Raw::Apply {
                            name: "List".to_string(),
                            args: vec![Raw::Name {
                                name: elem,
                                line: 0,
                            }],
                            line: 0,
                        },
                    ]),
                ]),
            ),
        );
        Builder {
            env: SchemaEnv::new(),
            templates,
            declared: BTreeSet::new(),
        }
    }

    fn resolve(
        &mut self,
        raw: &Raw,
        scope: &BTreeMap<String, TypeExpr>,
    ) -> Result<TypeExpr, SchemaError> {
        match raw {
            Raw::Tensor(shape) => Ok(TypeExpr::Tensor(shape.clone())),
            Raw::Sum(args) => Ok(TypeExpr::Sum(
                args.iter()
                    .map(|a| self.resolve(a, scope))
                    .collect::<Result<_, _>>()?,
            )),
            Raw::Prod(args) => Ok(TypeExpr::Prod(
                args.iter()
                    .map(|a| self.resolve(a, scope))
                    .collect::<Result<_, _>>()?,
            )),
            Raw::MSet(e) => Ok(TypeExpr::MSet(Box::new(self.resolve(e, scope)?))),
            Raw::Name { name, line } => {
                if let Some(bound) = scope.get(name) {
                    return Ok(bound.clone());
                }
                if self.declared.contains(name) || self.env.get(name).is_some() {
                    return Ok(TypeExpr::Ref(name.clone()));
                }
                if let Some((params, _)) = self.templates.get(name) {
                    return Err(SchemaError::TemplateArity {
                        line: *line,
                        name: name.clone(),
                        expected: params.len(),
                        got: 0,
                    });
                }
                Err(SchemaError::Unresolved {
                    line: *line,
                    name: name.clone(),
                })
            }
            Raw::Apply { name, args, line } => {
                let resolved_args: Vec<TypeExpr> = args
                    .iter()
                    .map(|a| self.resolve(a, scope))
                    .collect::<Result<_, _>>()?;
                let (params, body) = match self.templates.get(name) {
                    Some(t) => t.clone(),
                    None => {
                        if self.declared.contains(name) {
                            return Err(SchemaError::TemplateArity {
                                line: *line,
                                name: name.clone(),
                                expected: 0,
                                got: resolved_args.len(),
                            });
                        }
                        return Err(SchemaError::Unresolved {
                            line: *line,
                            name: name.clone(),
                        });
                    }
                };
                if params.len() != resolved_args.len() {
                    return Err(SchemaError::TemplateArity {
                        line: *line,
                        name: name.clone(),
                        expected: params.len(),
                        got: resolved_args.len(),
                    });
                }
                let instance = format!(
                    "{name}[{}]",
                    resolved_args
                        .iter()
                        .map(|a| a.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                );
                if self.env.get(&instance).is_none() {
                    // placeholder first so recursive instantiations resolve
                    self.env
                        .insert(instance.clone(), TypeExpr::Ref(instance.clone()));
                    let inner_scope: BTreeMap<String, TypeExpr> =
                        params.iter().cloned().zip(resolved_args).collect();
                    let resolved = self.resolve(&body, &inner_scope)?;
                    self.env.insert(instance.clone(), resolved);
                }
                Ok(TypeExpr::Ref(instance))
            }
        }
    }
}

fn parse_def(tokens: &mut Tokens, line: usize) -> Result<RawDef, SchemaError> {
    let name = tokens.expect_ident()?;
    let params = if tokens.peek_is(&TokenKind::LBracket) {
        tokens.next_token();
        let mut params = vec![tokens.expect_ident()?];
        while tokens.peek_is(&TokenKind::Comma) {
            tokens.next_token();
            params.push(tokens.expect_ident()?);
        }
        tokens.expect(TokenKind::RBracket)?;
        Some(params)
    } else {
        None
    };
    tokens.expect(TokenKind::Eq)?;
    let body = parse_type(tokens)?;
    tokens.expect_end()?;
    Ok(RawDef {
        name,
        params,
        body,
        line,
    })
}

fn parse_type(tokens: &mut Tokens) -> Result<Raw, SchemaError> {
    let (name, line) = match tokens.next_token() {
        Some(Token {
            kind: TokenKind::Ident(name),
            line,
            ..
        }) => (name, line),
        other => return Err(unexpected(other.as_ref(), "a type", tokens.line)),
    };
    match name.as_str() {
        "Scal" => Ok(Raw::Tensor(vec![1])),
        "Unit" => Ok(Raw::Tensor(vec![0])),
        "Bool" => Ok(Raw::Sum(vec![Raw::Tensor(vec![0]), Raw::Tensor(vec![0])])),
        "Tensor" => {
            let shape = parse_nat_list(tokens)?;
            Ok(Raw::Tensor(shape))
        }
        "Vector" => {
            let dims = parse_nat_list(tokens)?;
            if dims.len() != 1 {
                return Err(SchemaError::TemplateArity {
                    line,
                    name,
                    expected: 1,
                    got: dims.len(),
                });
            }
            Ok(Raw::Tensor(dims))
        }
        "Enum" => {
            let dims = parse_nat_list(tokens)?;
            if dims.len() != 1 {
                return Err(SchemaError::TemplateArity {
                    line,
                    name,
                    expected: 1,
                    got: dims.len(),
                });
            }
            Ok(Raw::Sum(vec![Raw::Tensor(vec![0]); dims[0]]))
        }
        "Sum" | "Prod" => {
            let args = parse_type_list(tokens, true)?;
            Ok(if name == "Sum" {
                Raw::Sum(args)
            } else {
                Raw::Prod(args)
            })
        }
        "MSet" => {
            let args = parse_type_list(tokens, false)?;
            if args.len() != 1 {
                return Err(SchemaError::MSetArity {
                    line,
                    got: args.len(),
                });
            }
            Ok(Raw::MSet(Box::new(args.into_iter().next().unwrap())))
        }
        "Option" => {
            let args = parse_type_list(tokens, false)?;
            if args.len() != 1 {
                return Err(SchemaError::TemplateArity {
                    line,
                    name,
                    expected: 1,
                    got: args.len(),
                });
            }
            Ok(Raw::Sum(vec![
                Raw::Tensor(vec![0]),
                args.into_iter().next().unwrap(),
            ]))
        }
        _ => {
            if tokens.peek_is(&TokenKind::LBracket) {
                let args = parse_type_list(tokens, false)?;
                Ok(Raw::Apply { name, args, line })
            } else {
                Ok(Raw::Name { name, line })
            }
        }
    }
}

fn parse_type_list(tokens: &mut Tokens, allow_empty: bool) -> Result<Vec<Raw>, SchemaError> {
    tokens.expect(TokenKind::LBracket)?;
    let mut args = Vec::new();
    if tokens.peek_is(&TokenKind::RBracket) {
        tokens.next_token();
        if allow_empty {
            return Ok(args);
        }
        return Ok(args); // arity errors are reported by the caller
    }
    args.push(parse_type(tokens)?);
    while tokens.peek_is(&TokenKind::Comma) {
        tokens.next_token();
        args.push(parse_type(tokens)?);
    }
    tokens.expect(TokenKind::RBracket)?;
    Ok(args)
}

fn parse_nat_list(tokens: &mut Tokens) -> Result<Vec<usize>, SchemaError> {
    tokens.expect(TokenKind::LBracket)?;
    let mut nats = vec![tokens.expect_nat()?];
    while tokens.peek_is(&TokenKind::Comma) {
        tokens.next_token();
        nats.push(tokens.expect_nat()?);
    }
    tokens.expect(TokenKind::RBracket)?;
    Ok(nats)
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Ident(String),
    Nat(usize),
    LBracket,
    RBracket,
    Comma,
    Eq,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Nat(n) => format!("number `{n}`"),
            TokenKind::LBracket => "`[`".to_string(),
            TokenKind::RBracket => "`]`".to_string(),
            TokenKind::Comma => "`,`".to_string(),
            TokenKind::Eq => "`=`".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    line: usize,
    col: usize,
}

struct Tokens {
    items: std::collections::VecDeque<Token>,
    line: usize,
    end_col: usize,
}

impl Tokens {
    fn next_token(&mut self) -> Option<Token> {
        self.items.pop_front()
    }

    fn peek_is(&self, kind: &TokenKind) -> bool {
        self.items.front().map(|t| &t.kind == kind).unwrap_or(false)
    }

    fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn expect(&mut self, kind: TokenKind) -> Result<Token, SchemaError> {
        match self.next_token() {
            Some(t) if t.kind == kind => Ok(t),
            other => Err(unexpected(other.as_ref(), &kind.describe(), self.line)),
        }
    }

    fn expect_ident(&mut self) -> Result<String, SchemaError> {
        match self.next_token() {
            Some(Token {
                kind: TokenKind::Ident(s),
                ..
            }) => Ok(s),
            other => Err(unexpected(other.as_ref(), "an identifier", self.line)),
        }
    }

    fn expect_nat(&mut self) -> Result<usize, SchemaError> {
        match self.next_token() {
            Some(Token {
                kind: TokenKind::Nat(n),
                ..
            }) => Ok(n),
            other => Err(unexpected(other.as_ref(), "a natural number", self.line)),
        }
    }

    fn expect_end(&mut self) -> Result<(), SchemaError> {
        match self.next_token() {
            None => Ok(()),
            Some(t) => Err(SchemaError::Syntax {
                line: t.line,
                col: t.col,
                expected: "end of definition".to_string(),
                found: t.kind.describe(),
            }),
        }
    }
}

fn unexpected(found: Option<&Token>, expected: &str, line: usize) -> SchemaError {
    match found {
        Some(t) => SchemaError::Syntax {
            line: t.line,
            col: t.col,
            expected: expected.to_string(),
            found: t.kind.describe(),
        },
        None => SchemaError::Syntax {
            line,
            col: 0,
            expected: expected.to_string(),
            found: "end of line".to_string(),
        },
    }
}

struct Lexer<'a> {
    src: &'a str,
    line: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str, line: usize) -> Self {
        Lexer { src, line }
    }

    fn lex(self) -> Result<Tokens, SchemaError> {
        let mut items = std::collections::VecDeque::new();
        let mut chars = self.src.char_indices().peekable();
        let mut end_col = 1;
        while let Some(&(i, c)) = chars.peek() {
            let col = i + 1;
            end_col = col;
            match c {
                '#' => break,
                c if c.is_whitespace() => {
                    chars.next();
                }
                '[' | ']' | ',' | '=' => {
                    chars.next();
                    let kind = match c {
                        '[' => TokenKind::LBracket,
                        ']' => TokenKind::RBracket,
                        ',' => TokenKind::Comma,
                        _ => TokenKind::Eq,
                    };
                    items.push_back(Token {
                        kind,
                        line: self.line,
                        col,
                    });
                }
                c if c.is_ascii_digit() => {
                    let mut text = String::new();
                    while let Some(&(_, d)) = chars.peek() {
                        if d.is_ascii_digit() {
                            text.push(d);
                            chars.next();
                        } else {
                            break;
                        }
                    }
                    let n = text.parse::<usize>().map_err(|_| SchemaError::Syntax {
                        line: self.line,
                        col,
                        expected: "a natural number".to_string(),
                        found: format!("`{text}`"),
                    })?;
                    items.push_back(Token {
                        kind: TokenKind::Nat(n),
                        line: self.line,
                        col,
                    });
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let mut text = String::new();
                    while let Some(&(_, d)) = chars.peek() {
                        if d.is_ascii_alphanumeric() || d == '_' {
                            text.push(d);
                            chars.next();
                        } else {
                            break;
                        }
                    }
                    items.push_back(Token {
                        kind: TokenKind::Ident(text),
                        line: self.line,
                        col,
                    });
                }
                other => {
                    return Err(SchemaError::Syntax {
                        line: self.line,
                        col,
                        expected: "a token".to_string(),
                        found: format!("`{other}`"),
                    });
                }
            }
        }
        Ok(Tokens {
            items,
            line: self.line,
            end_col,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn option_product_expands_structurally() {
        let env = parse_schema("input = Prod[Option[Scal], Option[Bool]]").unwrap();
        let expanded = env.expand(env.get("input").unwrap());
        let expected = TypeExpr::Prod(vec![
            TypeExpr::Sum(vec![TypeExpr::Tensor(vec![0]), TypeExpr::Tensor(vec![1])]),
            TypeExpr::Sum(vec![
                TypeExpr::Tensor(vec![0]),
                TypeExpr::Sum(vec![TypeExpr::Tensor(vec![0]), TypeExpr::Tensor(vec![0])]),
            ]),
        ]);
        assert_eq!(expanded, expected);
    }

    #[test]
    fn mset_arity_is_rejected() {
        let err = parse_schema("t = MSet[Vector[3], Vector[2]]").unwrap_err();
        assert_eq!(err, SchemaError::MSetArity { line: 1, got: 2 });
    }

    #[test]
    fn unguarded_recursion_is_rejected() {
        let err = parse_schema("bad = Prod[Scal, bad]").unwrap_err();
        assert_eq!(
            err,
            SchemaError::UnguardedRecursion {
                name: "bad".to_string()
            }
        );
        // a multiset cycle has no sum escape either
        assert!(matches!(
            parse_schema("x = MSet[x]"),
            Err(SchemaError::UnguardedRecursion { .. })
        ));
    }

    #[test]
    fn guarded_recursion_is_accepted() {
        let env = parse_schema("t = List[Scal]").unwrap();
        assert_eq!(
            env.get("t").unwrap(),
            &TypeExpr::Ref("List[Tensor[1]]".to_string())
        );
        let def = env.get("List[Tensor[1]]").unwrap();
        assert_eq!(
            def,
            &TypeExpr::Sum(vec![
                TypeExpr::Tensor(vec![0]),
                TypeExpr::Prod(vec![
                    TypeExpr::Tensor(vec![1]),
                    TypeExpr::Ref("List[Tensor[1]]".to_string()),
                ]),
            ])
        );
        // hand-written guarded recursion through a user definition
        let env = parse_schema("tree = Sum[Unit, Prod[Scal, MSet[tree]]]").unwrap();
        assert!(env.get("tree").is_some());
    }

    #[test]
    fn user_templates_monomorphize() {
        let env = parse_schema("pair[a, b] = Prod[a, b]\nx = pair[Scal, Bool]").unwrap();
        assert_eq!(
            env.get("x").unwrap(),
            &TypeExpr::Ref("pair[Tensor[1],Sum[Tensor[0],Tensor[0]]]".to_string())
        );
        let inst = env.expand(env.get("x").unwrap());
        assert_eq!(
            inst,
            TypeExpr::Prod(vec![TypeExpr::scal(), TypeExpr::boolean()])
        );
    }

    #[test]
    fn recursive_user_template() {
        let env = parse_schema("rose[a] = Sum[a, MSet[rose[a]]]\nx = rose[Scal]").unwrap();
        let name = "rose[Tensor[1]]";
        assert_eq!(
            env.get(name).unwrap(),
            &TypeExpr::Sum(vec![
                TypeExpr::scal(),
                TypeExpr::MSet(Box::new(TypeExpr::Ref(name.to_string()))),
            ])
        );
    }

    #[test]
    fn forward_references_resolve() {
        let env = parse_schema("a = Prod[b, b]\nb = Scal").unwrap();
        assert_eq!(
            env.expand(env.get("a").unwrap()),
            TypeExpr::Prod(vec![TypeExpr::scal(), TypeExpr::scal()])
        );
    }

    #[test]
    fn duplicate_and_reserved_names_rejected() {
        assert!(matches!(
            parse_schema("a = Scal\na = Bool"),
            Err(SchemaError::DuplicateDefinition { .. })
        ));
        assert!(matches!(
            parse_schema("Bool = Scal"),
            Err(SchemaError::DuplicateDefinition { .. })
        ));
    }

    #[test]
    fn unresolved_reference_reports_line() {
        let err = parse_schema("a = Scal\nc = Prod[a, missing]").unwrap_err();
        assert_eq!(
            err,
            SchemaError::Unresolved {
                line: 2,
                name: "missing".to_string()
            }
        );
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse_schema("t = Tensor[2,]").unwrap_err();
        match err {
            SchemaError::Syntax { line, col, .. } => {
                assert_eq!(line, 1);
                assert!(col > 0);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let env = parse_schema("# header\n\nt = Scal # trailing\n").unwrap();
        assert_eq!(env.get("t").unwrap(), &TypeExpr::scal());
    }

    #[test]
    fn sugar_forms() {
        let mut env = SchemaEnv::new();
        assert_eq!(env.parse_type("Unit").unwrap(), TypeExpr::Tensor(vec![0]));
        assert_eq!(env.parse_type("Scal").unwrap(), TypeExpr::Tensor(vec![1]));
        assert_eq!(
            env.parse_type("Vector[3]").unwrap(),
            TypeExpr::Tensor(vec![3])
        );
        assert_eq!(
            env.parse_type("Enum[3]").unwrap(),
            TypeExpr::Sum(vec![TypeExpr::unit(); 3])
        );
        assert_eq!(env.parse_type("Bool").unwrap(), TypeExpr::boolean());
        assert_eq!(
            env.parse_type("Option[Scal]").unwrap(),
            TypeExpr::option(TypeExpr::scal())
        );
        assert_eq!(env.parse_type("Sum[]").unwrap(), TypeExpr::Sum(vec![]));
        // Nothing (the empty sum) parses; compiling it is rejected elsewhere
        let env2 = parse_schema("nothing = Sum[]").unwrap();
        assert_eq!(env2.get("nothing").unwrap(), &TypeExpr::Sum(vec![]));
    }
}
