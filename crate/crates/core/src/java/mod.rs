//! Java front-end: tokenizer, recursive-descent parser and the AST types the
//! path miner walks.

pub mod ast;
mod lexer;
mod parser;

use thiserror::Error;

pub use ast::{AstNode, MethodAst, Span};
pub use parser::type_text;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("empty input")]
    EmptyInput,
}

/// Fields declared by one type (`Outer.Inner` for nested types).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassInfo {
    pub name: String,
    /// (field name, simple declared type)
    pub fields: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedFile {
    pub methods: Vec<MethodAst>,
    pub classes: Vec<ClassInfo>,
}

/// Parses text holding exactly one method (or constructor) declaration.
pub fn parse_java_method(source_text: &str) -> Result<MethodAst, ParseError> {
    if source_text.trim().is_empty() {
        return Err(ParseError::EmptyInput);
    }
    let toks = lexer::tokenize(source_text)?;
    let mut p = parser::Parser::new(toks);
    let (root, name, param_count) = p.parse_single_method()?;
    Ok(MethodAst {
        name,
        source_text: source_text.to_string(),
        first_line: 1,
        root,
        file: String::new(),
        class_name: None,
        param_count,
    })
}

/// Parses a compilation unit and returns every method and constructor of
/// its (nested) named types. Spans use file line numbers.
pub fn parse_java_file(src: &str, file: &str) -> Result<ParsedFile, ParseError> {
    if src.trim().is_empty() {
        return Err(ParseError::EmptyInput);
    }
    let toks = lexer::tokenize(src)?;
    let mut p = parser::Parser::new(toks);
    p.parse_compilation_unit()?;
    let lines: Vec<&str> = src.lines().collect();
    let methods = p
        .methods
        .into_iter()
        .map(|m| {
            let text = lines[m.first_line - 1..m.last_line.min(lines.len())].join("\n");
            MethodAst {
                name: m.name,
                source_text: text,
                first_line: m.first_line,
                root: m.root,
                file: file.to_string(),
                class_name: m.class_name,
                param_count: m.param_count,
            }
        })
        .collect();
    let classes = p
        .classes
        .into_iter()
        .map(|c| ClassInfo {
            name: c.name,
            fields: c.fields,
        })
        .collect();
    Ok(ParsedFile { methods, classes })
}
