use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("unclosed placeholder starting at byte {position}")]
    Unclosed { position: usize },
    #[error("malformed placeholder at byte {position}: expected `{{{{ .Data.<key> }}}}`")]
    Malformed { position: usize },
    #[error("no value for key {key:?}")]
    MissingKey { key: String },
}

/// Substitutes `{{ .Data.<key> }}` placeholders. Keys may contain any
/// character except whitespace and `}`.
pub fn render_template(template: &str, data: &BTreeMap<String, String>) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len());
    render_with(template, |key| data.get(key).map(|v| v.as_bytes()), |piece| {
        out.push_str(std::str::from_utf8(piece).expect("slices of str and values are utf-8"))
    })?;
    Ok(out)
}

/// Byte-valued variant used for injected files, where secret values may be
/// binary.
pub fn render_template_bytes(template: &str, data: &BTreeMap<String, Vec<u8>>) -> Result<Vec<u8>, TemplateError> {
    let mut out = Vec::with_capacity(template.len());
    render_with(template, |key| data.get(key).map(Vec::as_slice), |piece| out.extend_from_slice(piece))?;
    Ok(out)
}

fn render_with<'d>(
    template: &str,
    lookup: impl Fn(&str) -> Option<&'d [u8]>,
    mut emit: impl FnMut(&[u8]),
) -> Result<(), TemplateError> {
    let mut rest = template;
    let mut offset = 0;
    while let Some(start) = rest.find("{{") {
        emit(&rest.as_bytes()[..start]);
        let position = offset + start;
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or(TemplateError::Unclosed { position })?;
        let key = after[..end]
            .trim()
            .strip_prefix(".Data.")
            .filter(|k| !k.is_empty() && !k.contains(|c: char| c.is_whitespace() || c == '{' || c == '}'))
            .ok_or(TemplateError::Malformed { position })?;
        let value = lookup(key).ok_or_else(|| TemplateError::MissingKey { key: key.to_string() })?;
        emit(value);
        let consumed = start + 2 + end + 2;
        offset += consumed;
        rest = &rest[consumed..];
    }
    emit(rest.as_bytes());
    Ok(())
}
