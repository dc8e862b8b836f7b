//! Recursive-descent parser for Java method declarations and the class
//! structure around them.
//!
//! Node kinds follow the Eclipse JDT DOM names (see `NODE_KINDS.md`). Two
//! shape rules keep the tree in the form path mining expects:
//! leaves are identifier/literal-like tokens, and a non-terminal that would
//! end up without children (an empty block, `return;`, ...) is pruned.

use super::ast::{AstNode, Span};
use super::lexer::{TokKind, Token};
use super::ParseError;

type PResult<T> = Result<T, ParseError>;
type Node = Option<AstNode>;

const PRIMITIVES: &[&str] = &[
    "boolean", "byte", "char", "short", "int", "long", "float", "double", "void",
];

const MODIFIERS: &[&str] = &[
    "public", "protected", "private", "static", "final", "abstract", "native", "synchronized",
    "transient", "volatile", "strictfp", "default",
];

const ASSIGN_OPS: &[&str] = &[
    "=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=",
];

/// A method found while parsing a compilation unit.
#[derive(Debug, Clone)]
pub struct ParsedMethod {
    pub class_name: Option<String>,
    pub name: String,
    pub param_count: usize,
    pub root: AstNode,
    pub first_line: usize,
    pub last_line: usize,
}

/// A type declaration's fields (name, declared type text).
#[derive(Debug, Clone, Default)]
pub struct ParsedClass {
    pub name: String,
    pub fields: Vec<(String, String)>,
}

pub struct Parser {
    toks: Vec<Token>,
    pos: usize,
    class_stack: Vec<String>,
    pub methods: Vec<ParsedMethod>,
    pub classes: Vec<ParsedClass>,
    // anonymous class bodies are parsed inside methods; their members are
    // part of the enclosing tree and not reported as separate methods
    anon_depth: usize,
}

fn flatten(children: Vec<Node>) -> Vec<AstNode> {
    children.into_iter().flatten().collect()
}

impl Parser {
    pub fn new(toks: Vec<Token>) -> Self {
        Self {
            toks,
            pos: 0,
            class_stack: Vec::new(),
            methods: Vec::new(),
            classes: Vec::new(),
            anon_depth: 0,
        }
    }

    // ---- token helpers ------------------------------------------------

    fn peek(&self) -> &Token {
        &self.toks[self.pos.min(self.toks.len() - 1)]
    }

    fn peek_at(&self, n: usize) -> &Token {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)]
    }

    fn is(&self, text: &str) -> bool {
        let t = self.peek();
        t.text == text && matches!(t.kind, TokKind::Punct | TokKind::Keyword | TokKind::Ident)
    }

    fn is_at(&self, n: usize, text: &str) -> bool {
        let t = self.peek_at(n);
        t.text == text && matches!(t.kind, TokKind::Punct | TokKind::Keyword | TokKind::Ident)
    }

    fn at_eof(&self) -> bool {
        self.peek().kind == TokKind::Eof
    }

    fn eat(&mut self, text: &str) -> bool {
        if self.is(text) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn err_here(&self, message: impl Into<String>) -> ParseError {
        let t = self.peek();
        let found = if t.kind == TokKind::Eof {
            "end of input".to_string()
        } else {
            format!("`{}`", t.text)
        };
        ParseError::Syntax {
            line: t.span.start_line,
            col: t.span.start_col,
            message: format!("{}, found {found}", message.into()),
        }
    }

    fn expect(&mut self, text: &str) -> PResult<()> {
        if self.eat(text) {
            Ok(())
        } else {
            Err(self.err_here(format!("expected `{text}`")))
        }
    }

    fn ident(&mut self) -> PResult<Token> {
        let t = self.peek().clone();
        if t.kind == TokKind::Ident {
            self.pos += 1;
            Ok(t)
        } else {
            Err(self.err_here("expected identifier"))
        }
    }

    fn is_ident(&self) -> bool {
        self.peek().kind == TokKind::Ident
    }

    /// `>` tokens are single characters; this checks for adjacent `>` or `=`.
    fn adjacent(&self, n: usize, text: &str) -> bool {
        let a = self.peek_at(n);
        let b = self.peek_at(n + 1);
        b.text == text && b.kind == TokKind::Punct && a.end == b.start
    }

    fn leaf(kind: &str, tok: &Token) -> AstNode {
        AstNode::terminal(kind, tok.text.clone(), tok.span)
    }

    fn span_from(&self, start: usize) -> Span {
        let first = self.toks[start].span;
        let last = self.toks[self.pos.saturating_sub(1).max(start)].span;
        first.join(last)
    }

    fn mk(&self, kind: &str, start: usize, children: Vec<Node>) -> Node {
        let children = flatten(children);
        if children.is_empty() {
            return None;
        }
        let mut span = self.span_from(start);
        for c in &children {
            span = span.join(c.span);
        }
        Some(AstNode {
            kind: kind.to_string(),
            text: String::new(),
            children,
            span,
        })
    }

    // ---- annotations & modifiers --------------------------------------

    fn skip_annotation(&mut self) -> PResult<()> {
        self.expect("@")?;
        self.ident()?;
        while self.is(".") && self.peek_at(1).kind == TokKind::Ident {
            self.pos += 2;
        }
        if self.is("(") {
            self.skip_balanced("(", ")")?;
        }
        Ok(())
    }

    fn skip_balanced(&mut self, open: &str, close: &str) -> PResult<()> {
        self.expect(open)?;
        let mut depth = 1;
        while depth > 0 {
            if self.at_eof() {
                return Err(self.err_here(format!("expected `{close}`")));
            }
            if self.is(open) {
                depth += 1;
            } else if self.is(close) {
                depth -= 1;
            }
            self.pos += 1;
        }
        Ok(())
    }

    fn is_annotation_start(&self) -> bool {
        self.is("@") && !self.is_at(1, "interface")
    }

    fn skip_modifiers(&mut self) -> PResult<()> {
        loop {
            if self.is_annotation_start() {
                self.skip_annotation()?;
            } else if MODIFIERS.iter().any(|m| self.is(m)) && !self.is_at(1, ":") {
                // `default:` inside switch is not a modifier
                self.pos += 1;
            } else if (self.is("sealed") || self.is("non")) && self.peek().kind == TokKind::Ident {
                if self.is("non") && self.is_at(1, "-") && self.is_at(2, "sealed") {
                    self.pos += 3;
                } else if self.is("sealed")
                    && matches!(self.peek_at(1).text.as_str(), "class" | "interface" | "abstract" | "public" | "static" | "final")
                {
                    self.pos += 1;
                } else {
                    return Ok(());
                }
            } else {
                return Ok(());
            }
        }
    }

    // ---- types ----------------------------------------------------------

    fn is_primitive(&self) -> bool {
        self.peek().kind == TokKind::Keyword && PRIMITIVES.contains(&self.peek().text.as_str())
    }

    /// A type without trailing array dimensions.
    fn parse_base_type(&mut self) -> PResult<Node> {
        while self.is_annotation_start() {
            self.skip_annotation()?;
        }
        if self.is_primitive() {
            let t = self.peek().clone();
            self.pos += 1;
            return Ok(Some(Self::leaf("PrimitiveType", &t)));
        }
        let start = self.pos;
        let mut segments: Vec<Node> = Vec::new();
        loop {
            let seg_start = self.pos;
            let id = self.ident()?;
            let mut seg = Some(Self::leaf("SimpleType", &id));
            if self.is("<") {
                let args = self.parse_type_args()?;
                let mut children = vec![seg];
                children.extend(args);
                seg = self.mk("ParameterizedType", seg_start, children);
            }
            segments.push(seg);
            if self.is(".") && (self.peek_at(1).kind == TokKind::Ident || self.is_at(1, "@")) {
                self.pos += 1;
                while self.is_annotation_start() {
                    self.skip_annotation()?;
                }
            } else {
                break;
            }
        }
        if segments.len() == 1 {
            return Ok(segments.pop().flatten());
        }
        Ok(self.mk("QualifiedType", start, segments))
    }

    fn parse_type_args(&mut self) -> PResult<Vec<Node>> {
        self.expect("<")?;
        let mut args = Vec::new();
        if self.eat(">") {
            return Ok(args);
        }
        loop {
            while self.is_annotation_start() {
                self.skip_annotation()?;
            }
            if self.is("?") {
                let start = self.pos;
                let q = self.peek().clone();
                self.pos += 1;
                if self.eat("extends") || self.eat("super") {
                    let bound = self.parse_type()?;
                    args.push(self.mk("WildcardType", start, vec![bound]));
                } else {
                    args.push(Some(Self::leaf("WildcardType", &q)));
                }
            } else {
                args.push(self.parse_type()?);
            }
            if !self.eat(",") {
                break;
            }
        }
        self.expect(">")?;
        Ok(args)
    }

    fn parse_dims(&mut self) -> PResult<usize> {
        let mut n = 0;
        loop {
            while self.is_annotation_start() && self.is_at(2, "[") {
                self.skip_annotation()?;
            }
            if self.is("[") && self.is_at(1, "]") {
                self.pos += 2;
                n += 1;
            } else {
                return Ok(n);
            }
        }
    }

    fn parse_type(&mut self) -> PResult<Node> {
        let start = self.pos;
        let base = self.parse_base_type()?;
        if self.parse_dims()? > 0 {
            Ok(self.mk("ArrayType", start, vec![base]))
        } else {
            Ok(base)
        }
    }

    /// Speculatively parses a type, restoring the position on failure.
    fn try_type(&mut self) -> Option<Node> {
        let save = self.pos;
        match self.parse_type() {
            Ok(t) => Some(t),
            Err(_) => {
                self.pos = save;
                None
            }
        }
    }

    fn parse_type_params(&mut self) -> PResult<Vec<Node>> {
        let mut out = Vec::new();
        if !self.is("<") {
            return Ok(out);
        }
        self.pos += 1;
        loop {
            let start = self.pos;
            while self.is_annotation_start() {
                self.skip_annotation()?;
            }
            let name = self.ident()?;
            let mut children = vec![Some(Self::leaf("SimpleName", &name))];
            if self.eat("extends") {
                children.push(self.parse_type()?);
                while self.eat("&") {
                    children.push(self.parse_type()?);
                }
            }
            out.push(self.mk("TypeParameter", start, children));
            if !self.eat(",") {
                break;
            }
        }
        self.expect(">")?;
        Ok(out)
    }

    // ---- declarations -------------------------------------------------

    /// Parses a whole input that must be exactly one method declaration.
    pub fn parse_single_method(&mut self) -> PResult<(AstNode, String, usize)> {
        let (node, name, params) = self.parse_method_decl()?;
        if !self.at_eof() {
            return Err(self.err_here("expected end of input after method"));
        }
        Ok((node, name, params))
    }

    /// Modifiers, optional type parameters, return type (absent for
    /// constructors), name, parameters, throws clause and body.
    fn parse_method_decl(&mut self) -> PResult<(AstNode, String, usize)> {
        let start = self.pos;
        self.skip_modifiers()?;
        let mut children = self.parse_type_params()?;
        if !(self.is_ident() && self.is_at(1, "(")) {
            children.push(self.parse_type()?);
        }
        self.finish_method(start, children)
    }

    fn finish_method(&mut self, start: usize, mut children: Vec<Node>) -> PResult<(AstNode, String, usize)> {
        let name = self.ident()?;
        children.push(Some(Self::leaf("SimpleName", &name)));
        let params = self.parse_params()?;
        let param_count = params.len();
        children.extend(params);
        self.parse_dims()?;
        if self.eat("throws") {
            loop {
                children.push(self.parse_type()?);
                if !self.eat(",") {
                    break;
                }
            }
        }
        if self.is("{") {
            children.push(self.parse_block()?);
        } else if self.eat("default") {
            // annotation element default value
            children.push(self.parse_element_value()?);
            self.expect(";")?;
        } else {
            self.expect(";")?;
        }
        let node = self
            .mk("MethodDeclaration", start, children)
            .expect("method declaration always has a name leaf");
        Ok((node, name.text, param_count))
    }

    fn parse_element_value(&mut self) -> PResult<Node> {
        if self.is("{") {
            self.parse_array_initializer()
        } else if self.is_annotation_start() {
            self.skip_annotation()?;
            Ok(None)
        } else {
            self.parse_ternary()
        }
    }

    fn parse_params(&mut self) -> PResult<Vec<Node>> {
        self.expect("(")?;
        let mut params = Vec::new();
        if self.eat(")") {
            return Ok(params);
        }
        loop {
            let start = self.pos;
            self.skip_modifiers()?;
            let ty = self.parse_type()?;
            while self.is_annotation_start() {
                self.skip_annotation()?;
            }
            self.eat("...");
            if self.is("this") {
                // receiver parameter
                self.pos += 1;
                params.push(None);
            } else {
                let name = self.ident()?;
                self.parse_dims()?;
                params.push(self.mk(
                    "SingleVariableDeclaration",
                    start,
                    vec![ty, Some(Self::leaf("SimpleName", &name))],
                ));
            }
            if !self.eat(",") {
                break;
            }
        }
        self.expect(")")?;
        // receiver parameters are not counted for arity
        Ok(params.into_iter().filter(Option::is_some).collect())
    }

    /// A compilation unit: package, imports and type declarations.
    pub fn parse_compilation_unit(&mut self) -> PResult<()> {
        self.skip_modifiers()?;
        if self.eat("package") {
            while !self.eat(";") {
                if self.at_eof() {
                    return Err(self.err_here("expected `;`"));
                }
                self.pos += 1;
            }
        }
        while self.is("import") {
            while !self.eat(";") {
                if self.at_eof() {
                    return Err(self.err_here("expected `;`"));
                }
                self.pos += 1;
            }
        }
        while !self.at_eof() {
            if self.eat(";") {
                continue;
            }
            self.skip_modifiers()?;
            self.parse_type_decl()?;
        }
        Ok(())
    }

    fn is_type_decl_start(&self) -> bool {
        self.is("class")
            || self.is("interface")
            || self.is("enum")
            || (self.is("@") && self.is_at(1, "interface"))
            || (self.is("record") && self.peek_at(1).kind == TokKind::Ident && self.is_at(2, "(")
                || self.is("record") && self.peek_at(1).kind == TokKind::Ident && self.is_at(2, "<"))
    }

    /// After modifiers: `class|interface|enum|record|@interface Name ... { body }`.
    fn parse_type_decl(&mut self) -> PResult<Node> {
        let start = self.pos;
        let is_enum = self.is("enum");
        let is_record = self.is("record");
        if self.eat("@") {
            self.expect("interface")?;
        } else if !(self.eat("class") || self.eat("interface") || self.eat("enum") || self.eat("record")) {
            return Err(self.err_here("expected type declaration"));
        }
        let name = self.ident()?;
        let mut children = vec![Some(Self::leaf("SimpleName", &name))];
        children.extend(self.parse_type_params()?);
        let mut fields = Vec::new();
        if is_record {
            let comps = self.parse_params()?;
            for c in comps.iter().flatten() {
                if let (Some(ty), Some(n)) = (c.children.first(), c.children.last()) {
                    fields.push((n.text.clone(), type_text(ty)));
                }
            }
            children.extend(comps);
        }
        for kw in ["extends", "implements", "permits"] {
            if self.eat(kw) {
                loop {
                    children.push(self.parse_type()?);
                    if !self.eat(",") {
                        break;
                    }
                }
            }
        }
        // a second `implements` after `extends`
        if self.eat("implements") {
            loop {
                children.push(self.parse_type()?);
                if !self.eat(",") {
                    break;
                }
            }
        }
        let qualified = match self.class_stack.last() {
            Some(outer) => format!("{outer}.{}", name.text),
            None => name.text.clone(),
        };
        self.class_stack.push(qualified.clone());
        let class_index = self.classes.len();
        self.classes.push(ParsedClass {
            name: qualified,
            fields,
        });
        let body = self.parse_class_body(is_enum, Some(class_index));
        self.class_stack.pop();
        children.extend(body?);
        let kind = if is_enum {
            "EnumDeclaration"
        } else if is_record {
            "RecordDeclaration"
        } else {
            "TypeDeclaration"
        };
        Ok(self.mk(kind, start, children))
    }

    fn parse_class_body(&mut self, is_enum: bool, class_index: Option<usize>) -> PResult<Vec<Node>> {
        self.expect("{")?;
        let mut members = Vec::new();
        if is_enum {
            loop {
                if self.is(";") || self.is("}") {
                    break;
                }
                let start = self.pos;
                while self.is_annotation_start() {
                    self.skip_annotation()?;
                }
                let name = self.ident()?;
                let mut children = vec![Some(Self::leaf("SimpleName", &name))];
                if self.is("(") {
                    children.extend(self.parse_args()?);
                }
                if self.is("{") {
                    self.anon_depth += 1;
                    let body = self.parse_class_body(false, None);
                    self.anon_depth -= 1;
                    children.push(self.mk("AnonymousClassDeclaration", start, body?));
                }
                members.push(self.mk("EnumConstantDeclaration", start, children));
                if !self.eat(",") {
                    break;
                }
            }
            self.eat(";");
        }
        while !self.eat("}") {
            if self.at_eof() {
                return Err(self.err_here("expected `}`"));
            }
            members.push(self.parse_member(class_index)?);
        }
        Ok(members)
    }

    fn parse_member(&mut self, class_index: Option<usize>) -> PResult<Node> {
        if self.eat(";") {
            return Ok(None);
        }
        let start = self.pos;
        if self.is("{") || (self.is("static") && self.is_at(1, "{")) {
            self.eat("static");
            let block = self.parse_block()?;
            return Ok(self.mk("Initializer", start, vec![block]));
        }
        self.skip_modifiers()?;
        if self.is_type_decl_start() {
            return self.parse_type_decl();
        }
        let mut children = self.parse_type_params()?;
        let is_ctor = self.is_ident() && self.is_at(1, "(");
        // compact record constructor: `Name {`
        if self.is_ident() && self.is_at(1, "{") {
            self.pos += 1;
            let block = self.parse_block()?;
            return Ok(self.mk("MethodDeclaration", start, vec![block]));
        }
        if !is_ctor {
            let ty = self.parse_type()?;
            if !(self.is_ident() && self.is_at(1, "(")) {
                return self.parse_field_rest(start, ty, class_index);
            }
            children.push(ty);
        }
        let (node, name, param_count) = self.finish_method(start, children)?;
        if self.anon_depth == 0 {
            let first_line = self.toks[start].span.start_line;
            let last_line = node.span.end_line;
            self.methods.push(ParsedMethod {
                class_name: self.class_stack.last().cloned(),
                name,
                param_count,
                root: node.clone(),
                first_line,
                last_line,
            });
        }
        Ok(Some(node))
    }

    fn parse_field_rest(&mut self, start: usize, ty: Node, class_index: Option<usize>) -> PResult<Node> {
        let ty_text = ty.as_ref().map(type_text).unwrap_or_default();
        let mut children = vec![ty];
        loop {
            let frag = self.parse_var_fragment()?;
            if let (Some(idx), Some(f)) = (class_index, frag.as_ref()) {
                if let Some(n) = f.children.first() {
                    self.classes[idx].fields.push((n.text.clone(), ty_text.clone()));
                }
            }
            children.push(frag);
            if !self.eat(",") {
                break;
            }
        }
        self.expect(";")?;
        Ok(self.mk("FieldDeclaration", start, children))
    }

    fn parse_var_fragment(&mut self) -> PResult<Node> {
        let start = self.pos;
        let name = self.ident()?;
        self.parse_dims()?;
        let mut children = vec![Some(Self::leaf("SimpleName", &name))];
        if self.eat("=") {
            children.push(self.parse_var_init()?);
        }
        Ok(self.mk("VariableDeclarationFragment", start, children))
    }

    fn parse_var_init(&mut self) -> PResult<Node> {
        if self.is("{") {
            self.parse_array_initializer()
        } else {
            self.parse_expression()
        }
    }

    // ---- statements -----------------------------------------------------

    pub fn parse_block(&mut self) -> PResult<Node> {
        let start = self.pos;
        self.expect("{")?;
        let mut stmts = Vec::new();
        while !self.eat("}") {
            if self.at_eof() {
                return Err(self.err_here("expected `}`"));
            }
            stmts.push(self.parse_statement()?);
        }
        Ok(self.mk("Block", start, stmts))
    }

    fn parse_statement(&mut self) -> PResult<Node> {
        let start = self.pos;
        let t = self.peek().clone();
        if t.kind == TokKind::Punct {
            match t.text.as_str() {
                "{" => return self.parse_block(),
                ";" => {
                    self.pos += 1;
                    return Ok(None);
                }
                "@" => return self.parse_local_decl_statement(),
                _ => {}
            }
        }
        if t.kind == TokKind::Ident && self.is_at(1, ":") && !self.is_at(1, "::") {
            self.pos += 2;
            let body = self.parse_statement()?;
            return Ok(self.mk(
                "LabeledStatement",
                start,
                vec![Some(Self::leaf("SimpleName", &t)), body],
            ));
        }
        if t.kind == TokKind::Ident && t.text == "yield" && !self.is_at(1, "=") && !self.is_at(1, ".") && !self.is_at(1, "(") {
            self.pos += 1;
            let e = self.parse_expression()?;
            self.expect(";")?;
            return Ok(self.mk("YieldStatement", start, vec![e]));
        }
        if t.kind == TokKind::Keyword {
            match t.text.as_str() {
                "if" => {
                    self.pos += 1;
                    let cond = self.parse_paren_expr()?;
                    let then = self.parse_statement()?;
                    let els = if self.eat("else") {
                        self.parse_statement()?
                    } else {
                        None
                    };
                    return Ok(self.mk("IfStatement", start, vec![cond, then, els]));
                }
                "while" => {
                    self.pos += 1;
                    let cond = self.parse_paren_expr()?;
                    let body = self.parse_statement()?;
                    return Ok(self.mk("WhileStatement", start, vec![cond, body]));
                }
                "do" => {
                    self.pos += 1;
                    let body = self.parse_statement()?;
                    self.expect("while")?;
                    let cond = self.parse_paren_expr()?;
                    self.expect(";")?;
                    return Ok(self.mk("DoStatement", start, vec![body, cond]));
                }
                "for" => return self.parse_for(),
                "return" | "throw" => {
                    self.pos += 1;
                    let e = if self.is(";") {
                        None
                    } else {
                        self.parse_expression()?
                    };
                    self.expect(";")?;
                    let kind = if t.text == "return" {
                        "ReturnStatement"
                    } else {
                        "ThrowStatement"
                    };
                    return Ok(self.mk(kind, start, vec![e]));
                }
                "break" | "continue" => {
                    self.pos += 1;
                    let label = if self.is_ident() {
                        let l = self.ident()?;
                        Some(Self::leaf("SimpleName", &l))
                    } else {
                        None
                    };
                    self.expect(";")?;
                    let kind = if t.text == "break" {
                        "BreakStatement"
                    } else {
                        "ContinueStatement"
                    };
                    return Ok(self.mk(kind, start, vec![label]));
                }
                "try" => return self.parse_try(),
                "switch" => {
                    let s = self.parse_switch("SwitchStatement")?;
                    return Ok(s);
                }
                "synchronized" => {
                    self.pos += 1;
                    let lock = self.parse_paren_expr()?;
                    let body = self.parse_block()?;
                    return Ok(self.mk("SynchronizedStatement", start, vec![lock, body]));
                }
                "assert" => {
                    self.pos += 1;
                    let cond = self.parse_expression()?;
                    let msg = if self.eat(":") {
                        self.parse_expression()?
                    } else {
                        None
                    };
                    self.expect(";")?;
                    return Ok(self.mk("AssertStatement", start, vec![cond, msg]));
                }
                "this" | "super" if self.is_at(1, "(") => {
                    self.pos += 1;
                    let kw = Self::leaf(
                        if t.text == "this" { "ThisExpression" } else { "SuperExpression" },
                        &t,
                    );
                    let mut children = vec![Some(kw)];
                    children.extend(self.parse_args()?);
                    self.expect(";")?;
                    let kind = if t.text == "this" {
                        "ConstructorInvocation"
                    } else {
                        "SuperConstructorInvocation"
                    };
                    return Ok(self.mk(kind, start, children));
                }
                "class" | "interface" | "enum" | "abstract" | "final" | "static" | "strictfp" => {
                    if t.text == "final" && !self.lookahead_local_type_decl() {
                        return self.parse_local_decl_statement();
                    }
                    self.skip_modifiers()?;
                    let decl = self.parse_type_decl_nested()?;
                    return Ok(self.mk("TypeDeclarationStatement", start, vec![decl]));
                }
                _ => {}
            }
        }
        if t.kind == TokKind::Ident && t.text == "record" && self.peek_at(1).kind == TokKind::Ident && self.is_at(2, "(") {
            let decl = self.parse_type_decl_nested()?;
            return Ok(self.mk("TypeDeclarationStatement", start, vec![decl]));
        }
        if let Some(decl) = self.try_local_decl()? {
            self.expect(";")?;
            return Ok(decl);
        }
        let e = self.parse_expression()?;
        self.expect(";")?;
        Ok(self.mk("ExpressionStatement", start, vec![e]))
    }

    fn lookahead_local_type_decl(&self) -> bool {
        let mut i = 0;
        while MODIFIERS.iter().any(|m| self.is_at(i, m)) {
            i += 1;
        }
        self.is_at(i, "class") || self.is_at(i, "interface") || self.is_at(i, "enum")
    }

    /// Local classes are parsed like members but their methods stay inside
    /// the enclosing method's tree.
    fn parse_type_decl_nested(&mut self) -> PResult<Node> {
        self.anon_depth += 1;
        let r = self.parse_type_decl();
        self.anon_depth -= 1;
        r
    }

    fn parse_local_decl_statement(&mut self) -> PResult<Node> {
        let start = self.pos;
        self.skip_modifiers()?;
        let ty = self.parse_type()?;
        let decl = self.finish_var_decl(start, ty, "VariableDeclarationStatement")?;
        self.expect(";")?;
        Ok(decl)
    }

    /// `Type name [= init], ...` when the upcoming tokens form a declaration.
    fn try_local_decl(&mut self) -> PResult<Option<Node>> {
        let start = self.pos;
        let first = self.peek();
        if !(first.kind == TokKind::Ident || self.is_primitive()) {
            return Ok(None);
        }
        let Some(ty) = self.try_type() else {
            return Ok(None);
        };
        let looks_like_decl = self.is_ident()
            && matches!(self.peek_at(1).text.as_str(), "=" | ";" | "," | "[" | ":");
        if !looks_like_decl {
            self.pos = start;
            return Ok(None);
        }
        Ok(Some(self.finish_var_decl(start, ty, "VariableDeclarationStatement")?))
    }

    fn finish_var_decl(&mut self, start: usize, ty: Node, kind: &str) -> PResult<Node> {
        let mut children = vec![ty];
        loop {
            children.push(self.parse_var_fragment()?);
            if !self.eat(",") {
                break;
            }
        }
        Ok(self.mk(kind, start, children))
    }

    fn parse_paren_expr(&mut self) -> PResult<Node> {
        self.expect("(")?;
        let e = self.parse_expression()?;
        self.expect(")")?;
        Ok(e)
    }

    fn parse_for(&mut self) -> PResult<Node> {
        let start = self.pos;
        self.expect("for")?;
        self.expect("(")?;
        // enhanced for: [modifiers] Type name :
        let save = self.pos;
        let decl_start = self.pos;
        self.skip_modifiers()?;
        if let Some(ty) = self.try_type() {
            if self.is_ident() && self.is_at(1, ":") {
                let name = self.ident()?;
                self.expect(":")?;
                let var = self.mk(
                    "SingleVariableDeclaration",
                    decl_start,
                    vec![ty, Some(Self::leaf("SimpleName", &name))],
                );
                let iterable = self.parse_expression()?;
                self.expect(")")?;
                let body = self.parse_statement()?;
                return Ok(self.mk("EnhancedForStatement", start, vec![var, iterable, body]));
            }
        }
        self.pos = save;
        let mut children = Vec::new();
        if !self.is(";") {
            let init_start = self.pos;
            let has_mods = self.is("final") || self.is_annotation_start();
            self.skip_modifiers()?;
            let decl = if has_mods {
                let ty = self.parse_type()?;
                Some(self.finish_var_decl(init_start, ty, "VariableDeclarationExpression")?)
            } else if let Some(d) = self.try_local_decl()? {
                // re-tag as an expression-level declaration
                Some(d.map(|mut n| {
                    n.kind = "VariableDeclarationExpression".into();
                    n
                }))
            } else {
                None
            };
            match decl {
                Some(d) => children.push(d),
                None => loop {
                    children.push(self.parse_expression()?);
                    if !self.eat(",") {
                        break;
                    }
                },
            }
        }
        self.expect(";")?;
        if !self.is(";") {
            children.push(self.parse_expression()?);
        }
        self.expect(";")?;
        if !self.is(")") {
            loop {
                children.push(self.parse_expression()?);
                if !self.eat(",") {
                    break;
                }
            }
        }
        self.expect(")")?;
        children.push(self.parse_statement()?);
        Ok(self.mk("ForStatement", start, children))
    }

    fn parse_try(&mut self) -> PResult<Node> {
        let start = self.pos;
        self.expect("try")?;
        let mut children = Vec::new();
        if self.eat("(") {
            while !self.eat(")") {
                let rs = self.pos;
                self.skip_modifiers()?;
                let save = self.pos;
                let resource = match self.try_type() {
                    Some(ty) if self.is_ident() && self.is_at(1, "=") => {
                        self.finish_var_decl(rs, ty, "VariableDeclarationExpression")?
                    }
                    _ => {
                        self.pos = save;
                        self.parse_expression()?
                    }
                };
                children.push(resource);
                if !self.eat(";") && !self.is(")") {
                    return Err(self.err_here("expected `;` or `)`"));
                }
            }
        }
        children.push(self.parse_block()?);
        let mut handlers = 0;
        while self.is("catch") {
            let cs = self.pos;
            self.pos += 1;
            self.expect("(")?;
            let ds = self.pos;
            self.skip_modifiers()?;
            let ts = self.pos;
            let mut types = vec![self.parse_type()?];
            while self.eat("|") {
                types.push(self.parse_type()?);
            }
            let ty = if types.len() > 1 {
                self.mk("UnionType", ts, types)
            } else {
                types.pop().flatten()
            };
            let name = self.ident()?;
            let var = self.mk(
                "SingleVariableDeclaration",
                ds,
                vec![ty, Some(Self::leaf("SimpleName", &name))],
            );
            self.expect(")")?;
            let body = self.parse_block()?;
            children.push(self.mk("CatchClause", cs, vec![var, body]));
            handlers += 1;
        }
        if self.eat("finally") {
            children.push(self.parse_block()?);
            handlers += 1;
        }
        if handlers == 0 && !self.toks[start + 1].text.eq("(") {
            return Err(self.err_here("expected `catch` or `finally`"));
        }
        Ok(self.mk("TryStatement", start, children))
    }

    /// `switch (e) { ... }` as a statement or expression.
    fn parse_switch(&mut self, kind: &str) -> PResult<Node> {
        let start = self.pos;
        self.expect("switch")?;
        let mut children = vec![self.parse_paren_expr()?];
        self.expect("{")?;
        while !self.eat("}") {
            if self.at_eof() {
                return Err(self.err_here("expected `}`"));
            }
            let cs = self.pos;
            let mut labels = Vec::new();
            if self.eat("default") {
            } else {
                self.expect("case")?;
                loop {
                    labels.push(self.parse_ternary()?);
                    if !self.eat(",") {
                        break;
                    }
                }
            }
            if self.eat("->") {
                children.push(self.mk("SwitchCase", cs, labels));
                if self.is("{") {
                    children.push(self.parse_block()?);
                } else if self.is("throw") {
                    children.push(self.parse_statement()?);
                } else {
                    let es = self.pos;
                    let e = self.parse_expression()?;
                    self.expect(";")?;
                    children.push(self.mk("ExpressionStatement", es, vec![e]));
                }
            } else {
                if !self.eat(":") {
                    return Err(self.err_here("expected `:` or `->`"));
                }
                children.push(self.mk("SwitchCase", cs, labels));
                while !(self.is("case") || self.is("default") && (self.is_at(1, ":") || self.is_at(1, "->")) || self.is("}")) {
                    if self.at_eof() {
                        return Err(self.err_here("expected `}`"));
                    }
                    children.push(self.parse_statement()?);
                }
            }
        }
        Ok(self.mk(kind, start, children))
    }

    // ---- expressions ----------------------------------------------------

    pub fn parse_expression(&mut self) -> PResult<Node> {
        if self.is_lambda_start() {
            return self.parse_lambda();
        }
        let start = self.pos;
        let lhs = self.parse_ternary()?;
        if self.at_assign_op() {
            let rhs = if self.is("{") {
                self.parse_array_initializer()?
            } else {
                self.parse_expression()?
            };
            return Ok(self.mk("Assignment", start, vec![lhs, rhs]));
        }
        Ok(lhs)
    }

    /// Consumes an assignment operator, including split `>>=` / `>>>=`.
    fn at_assign_op(&mut self) -> bool {
        if ASSIGN_OPS.iter().any(|op| self.is(op)) {
            self.pos += 1;
            return true;
        }
        if self.is(">") && self.adjacent(0, ">") {
            if self.adjacent(1, "=") {
                self.pos += 3;
                return true;
            }
            if self.adjacent(1, ">") && self.adjacent(2, "=") {
                self.pos += 4;
                return true;
            }
        }
        false
    }

    fn is_lambda_start(&self) -> bool {
        if self.is_ident() && self.is_at(1, "->") {
            return true;
        }
        if !self.is("(") {
            return false;
        }
        let mut depth = 0usize;
        let mut i = 0;
        loop {
            let t = self.peek_at(i);
            if t.kind == TokKind::Eof {
                return false;
            }
            if t.kind == TokKind::Punct {
                match t.text.as_str() {
                    "(" => depth += 1,
                    ")" => {
                        depth -= 1;
                        if depth == 0 {
                            return self.is_at(i + 1, "->");
                        }
                    }
                    _ => {}
                }
            }
            i += 1;
        }
    }

    fn parse_lambda(&mut self) -> PResult<Node> {
        let start = self.pos;
        let mut children = Vec::new();
        if self.is_ident() {
            let p = self.ident()?;
            let ps = self.pos - 1;
            children.push(self.mk(
                "VariableDeclarationFragment",
                ps,
                vec![Some(Self::leaf("SimpleName", &p))],
            ));
        } else {
            self.expect("(")?;
            if !self.eat(")") {
                loop {
                    let ps = self.pos;
                    self.skip_modifiers()?;
                    if self.is_ident() && (self.is_at(1, ",") || self.is_at(1, ")")) {
                        let p = self.ident()?;
                        children.push(self.mk(
                            "VariableDeclarationFragment",
                            ps,
                            vec![Some(Self::leaf("SimpleName", &p))],
                        ));
                    } else {
                        let ty = self.parse_type()?;
                        self.eat("...");
                        let p = self.ident()?;
                        children.push(self.mk(
                            "SingleVariableDeclaration",
                            ps,
                            vec![ty, Some(Self::leaf("SimpleName", &p))],
                        ));
                    }
                    if !self.eat(",") {
                        break;
                    }
                }
                self.expect(")")?;
            }
        }
        self.expect("->")?;
        let body = if self.is("{") {
            self.parse_block()?
        } else {
            self.parse_expression()?
        };
        children.push(body);
        Ok(self.mk("LambdaExpression", start, children))
    }

    fn parse_ternary(&mut self) -> PResult<Node> {
        let start = self.pos;
        let cond = self.parse_binary(1)?;
        if self.eat("?") {
            let a = if self.is_lambda_start() {
                self.parse_lambda()?
            } else {
                self.parse_ternary()?
            };
            self.expect(":")?;
            let b = if self.is_lambda_start() {
                self.parse_lambda()?
            } else {
                self.parse_ternary()?
            };
            return Ok(self.mk("ConditionalExpression", start, vec![cond, a, b]));
        }
        Ok(cond)
    }

    /// Binary operator at the cursor: (precedence, token count).
    fn binary_op(&self) -> Option<(u8, usize)> {
        let t = self.peek();
        if t.kind == TokKind::Keyword && t.text == "instanceof" {
            return Some((7, 1));
        }
        if t.kind != TokKind::Punct {
            return None;
        }
        let prec = match t.text.as_str() {
            "||" => 1,
            "&&" => 2,
            "|" => 3,
            "^" => 4,
            "&" => 5,
            "==" | "!=" => 6,
            "<" | "<=" => 7,
            "<<" => 8,
            "+" | "-" => 9,
            "*" | "/" | "%" => 10,
            ">" => {
                if self.adjacent(0, ">") {
                    if self.adjacent(1, ">") {
                        if self.adjacent(2, "=") {
                            return None;
                        }
                        return Some((8, 3));
                    }
                    if self.adjacent(1, "=") {
                        return None;
                    }
                    return Some((8, 2));
                }
                if self.adjacent(0, "=") {
                    return Some((7, 2));
                }
                7
            }
            _ => return None,
        };
        Some((prec, 1))
    }

    fn parse_binary(&mut self, min_prec: u8) -> PResult<Node> {
        let start = self.pos;
        let mut lhs = self.parse_unary()?;
        while let Some((prec, width)) = self.binary_op() {
            if prec < min_prec {
                break;
            }
            if self.is("instanceof") {
                self.pos += 1;
                self.eat("final");
                let ty = self.parse_type()?;
                let mut children = vec![lhs, ty];
                if self.is_ident() {
                    let n = self.ident()?;
                    children.push(Some(Self::leaf("SimpleName", &n)));
                }
                lhs = self.mk("InstanceofExpression", start, children);
                continue;
            }
            self.pos += width;
            let rhs = self.parse_binary(prec + 1)?;
            lhs = self.mk("InfixExpression", start, vec![lhs, rhs]);
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> PResult<Node> {
        let start = self.pos;
        if ["+", "-", "++", "--", "!", "~"].iter().any(|op| self.is(op)) {
            self.pos += 1;
            let operand = self.parse_unary()?;
            return Ok(self.mk("PrefixExpression", start, vec![operand]));
        }
        if self.is("(") {
            if let Some(cast) = self.try_cast()? {
                return Ok(cast);
            }
        }
        let mut e = self.parse_primary()?;
        e = self.parse_postfix(start, e)?;
        Ok(e)
    }

    fn try_cast(&mut self) -> PResult<Option<Node>> {
        let start = self.pos;
        self.pos += 1;
        let primitive = self.is_primitive();
        let Some(ty) = self.try_type() else {
            self.pos = start;
            return Ok(None);
        };
        let mut types = vec![ty];
        while self.is("&") {
            self.pos += 1;
            match self.try_type() {
                Some(t) => types.push(t),
                None => {
                    self.pos = start;
                    return Ok(None);
                }
            }
        }
        if !self.eat(")") {
            self.pos = start;
            return Ok(None);
        }
        let next = self.peek();
        let castable = if primitive && types.len() == 1 {
            // `(int) -x` is a cast, `(a) - x` is not
            !matches!(next.kind, TokKind::Punct)
                || ["(", "+", "-", "++", "--", "!", "~"].contains(&next.text.as_str())
        } else {
            match next.kind {
                TokKind::Ident
                | TokKind::Int
                | TokKind::Float
                | TokKind::Char
                | TokKind::Str
                | TokKind::TextBlock => true,
                TokKind::Keyword => {
                    ["this", "super", "new", "true", "false", "null", "switch"]
                        .contains(&next.text.as_str())
                        || PRIMITIVES.contains(&next.text.as_str())
                }
                TokKind::Punct => ["(", "!", "~"].contains(&next.text.as_str()),
                TokKind::Eof => false,
            }
        };
        if !castable {
            self.pos = start;
            return Ok(None);
        }
        let ty = if types.len() > 1 {
            self.mk("IntersectionType", start + 1, types)
        } else {
            types.pop().flatten()
        };
        let operand = if self.is_lambda_start() {
            self.parse_lambda()?
        } else {
            self.parse_unary()?
        };
        Ok(Some(self.mk("CastExpression", start, vec![ty, operand])))
    }

    fn parse_args(&mut self) -> PResult<Vec<Node>> {
        self.expect("(")?;
        let mut args = Vec::new();
        if self.eat(")") {
            return Ok(args);
        }
        loop {
            args.push(self.parse_expression()?);
            if !self.eat(",") {
                break;
            }
        }
        self.expect(")")?;
        Ok(args)
    }

    fn parse_array_initializer(&mut self) -> PResult<Node> {
        let start = self.pos;
        self.expect("{")?;
        let mut items = Vec::new();
        while !self.eat("}") {
            items.push(self.parse_var_init()?);
            if !self.eat(",") {
                self.expect("}")?;
                break;
            }
        }
        Ok(self.mk("ArrayInitializer", start, items))
    }

    fn parse_primary(&mut self) -> PResult<Node> {
        let start = self.pos;
        let t = self.peek().clone();
        let literal = match t.kind {
            TokKind::Int | TokKind::Float => Some("NumberLiteral"),
            TokKind::Str => Some("StringLiteral"),
            TokKind::Char => Some("CharacterLiteral"),
            TokKind::TextBlock => Some("TextBlock"),
            TokKind::Keyword if t.text == "true" || t.text == "false" => Some("BooleanLiteral"),
            TokKind::Keyword if t.text == "null" => Some("NullLiteral"),
            _ => None,
        };
        if let Some(kind) = literal {
            self.pos += 1;
            return Ok(Some(Self::leaf(kind, &t)));
        }
        match (t.kind, t.text.as_str()) {
            (TokKind::Keyword, "this") => {
                self.pos += 1;
                if self.is("(") {
                    return Err(self.err_here("constructor call must be a statement"));
                }
                Ok(Some(Self::leaf("ThisExpression", &t)))
            }
            (TokKind::Keyword, "super") => {
                self.pos += 1;
                let sup = Some(Self::leaf("SuperExpression", &t));
                if self.eat("::") {
                    let name = self.ident()?;
                    return Ok(self.mk(
                        "SuperMethodReference",
                        start,
                        vec![sup, Some(Self::leaf("SimpleName", &name))],
                    ));
                }
                self.expect(".")?;
                if self.is("<") {
                    self.parse_type_args()?;
                }
                let name = self.ident()?;
                let mut children = vec![sup, Some(Self::leaf("SimpleName", &name))];
                if self.is("(") {
                    children.extend(self.parse_args()?);
                    Ok(self.mk("SuperMethodInvocation", start, children))
                } else {
                    Ok(self.mk("SuperFieldAccess", start, children))
                }
            }
            (TokKind::Punct, "(") => {
                self.pos += 1;
                let e = self.parse_expression()?;
                self.expect(")")?;
                Ok(self.mk("ParenthesizedExpression", start, vec![e]))
            }
            (TokKind::Keyword, "new") => self.parse_creation(start, None),
            (TokKind::Keyword, "switch") => self.parse_switch("SwitchExpression"),
            (TokKind::Punct, "{") => self.parse_array_initializer(),
            (TokKind::Keyword, _) if PRIMITIVES.contains(&t.text.as_str()) => {
                // int.class, int[].class, int[]::new
                let ty = self.parse_type()?;
                if self.eat("::") {
                    self.expect("new")?;
                    return Ok(self.mk("CreationReference", start, vec![ty]));
                }
                self.expect(".")?;
                self.expect("class")?;
                Ok(self.mk("TypeLiteral", start, vec![ty]))
            }
            (TokKind::Ident, _) => {
                // Type[].class / Type[]::new / generic Type<X>::new
                if self.is_at(1, "[") && self.is_at(2, "]") {
                    let ty = self.parse_type()?;
                    if self.eat("::") {
                        self.expect("new")?;
                        return Ok(self.mk("CreationReference", start, vec![ty]));
                    }
                    self.expect(".")?;
                    self.expect("class")?;
                    return Ok(self.mk("TypeLiteral", start, vec![ty]));
                }
                if self.is_at(1, "<") {
                    let save = self.pos;
                    if let Some(ty) = self.try_type() {
                        if self.eat("::") {
                            if self.eat("new") {
                                return Ok(self.mk("CreationReference", start, vec![ty]));
                            }
                            let name = self.ident()?;
                            return Ok(self.mk(
                                "TypeMethodReference",
                                start,
                                vec![ty, Some(Self::leaf("SimpleName", &name))],
                            ));
                        }
                    }
                    self.pos = save;
                }
                self.pos += 1;
                let name = Some(Self::leaf("SimpleName", &t));
                if self.is("(") {
                    let mut children = vec![name];
                    children.extend(self.parse_args()?);
                    return Ok(self.mk("MethodInvocation", start, children));
                }
                Ok(name)
            }
            _ => Err(self.err_here("expected expression")),
        }
    }

    /// `new T(args) [body]`, `new T[n]...`, `new T[]{...}`; `outer` is the
    /// qualifying expression of `outer.new T()`.
    fn parse_creation(&mut self, start: usize, outer: Node) -> PResult<Node> {
        self.expect("new")?;
        if self.is("<") {
            self.parse_type_args()?;
        }
        let ty_start = self.pos;
        let base = self.parse_base_type()?;
        if self.is("[") || (self.is_annotation_start() && self.is_at(2, "[")) {
            let mut children = Vec::new();
            let mut dims = 0;
            loop {
                while self.is_annotation_start() {
                    self.skip_annotation()?;
                }
                if !self.is("[") {
                    break;
                }
                self.pos += 1;
                if self.eat("]") {
                    dims += 1;
                    continue;
                }
                children.push(self.parse_expression()?);
                self.expect("]")?;
                dims += 1;
            }
            debug_assert!(dims > 0);
            let array_type = self.mk("ArrayType", ty_start, vec![base]);
            let mut all = vec![array_type];
            all.extend(children);
            if self.is("{") {
                all.push(self.parse_array_initializer()?);
            }
            return Ok(self.mk("ArrayCreation", start, all));
        }
        let mut children = vec![outer, base];
        children.extend(self.parse_args()?);
        if self.is("{") {
            let body_start = self.pos;
            self.anon_depth += 1;
            let body = self.parse_class_body(false, None);
            self.anon_depth -= 1;
            children.push(self.mk("AnonymousClassDeclaration", body_start, body?));
        }
        Ok(self.mk("ClassInstanceCreation", start, children))
    }

    fn parse_postfix(&mut self, start: usize, mut e: Node) -> PResult<Node> {
        loop {
            if self.is(".") {
                self.pos += 1;
                if self.is("new") {
                    e = self.parse_creation(start, e)?;
                    continue;
                }
                if self.is("<") {
                    self.parse_type_args()?;
                }
                let t = self.peek().clone();
                match (t.kind, t.text.as_str()) {
                    (TokKind::Keyword, "class") => {
                        self.pos += 1;
                        e = self.mk("TypeLiteral", start, vec![e]);
                    }
                    (TokKind::Keyword, "this") => {
                        self.pos += 1;
                        e = self.mk(
                            "QualifiedThisExpression",
                            start,
                            vec![e, Some(Self::leaf("ThisExpression", &t))],
                        );
                    }
                    (TokKind::Keyword, "super") => {
                        // Outer.super.method()
                        self.pos += 1;
                        self.expect(".")?;
                        let name = self.ident()?;
                        let mut children =
                            vec![e, Some(Self::leaf("SuperExpression", &t)), Some(Self::leaf("SimpleName", &name))];
                        if self.is("(") {
                            children.extend(self.parse_args()?);
                            e = self.mk("SuperMethodInvocation", start, children);
                        } else {
                            e = self.mk("SuperFieldAccess", start, children);
                        }
                    }
                    _ => {
                        let name = self.ident()?;
                        let name = Some(Self::leaf("SimpleName", &name));
                        if self.is("(") {
                            let mut children = vec![e, name];
                            children.extend(self.parse_args()?);
                            e = self.mk("MethodInvocation", start, children);
                        } else {
                            e = self.mk("FieldAccess", start, vec![e, name]);
                        }
                    }
                }
            } else if self.is("[") {
                self.pos += 1;
                let idx = self.parse_expression()?;
                self.expect("]")?;
                e = self.mk("ArrayAccess", start, vec![e, idx]);
            } else if self.is("++") || self.is("--") {
                self.pos += 1;
                e = self.mk("PostfixExpression", start, vec![e]);
            } else if self.is("::") {
                self.pos += 1;
                if self.is("<") {
                    self.parse_type_args()?;
                }
                if self.eat("new") {
                    e = self.mk("CreationReference", start, vec![e]);
                } else {
                    let name = self.ident()?;
                    e = self.mk(
                        "ExpressionMethodReference",
                        start,
                        vec![e, Some(Self::leaf("SimpleName", &name))],
                    );
                }
            } else {
                return Ok(e);
            }
        }
    }
}

/// Source-like text of a type node (`List<String>` becomes `List`).
pub fn type_text(node: &AstNode) -> String {
    match node.kind.as_str() {
        "ParameterizedType" | "ArrayType" => node.children.first().map(type_text).unwrap_or_default(),
        "QualifiedType" => node
            .children
            .iter()
            .map(type_text)
            .collect::<Vec<_>>()
            .join("."),
        _ => node.text.clone(),
    }
}
