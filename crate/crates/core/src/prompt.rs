//! Escaping helpers for the prompt templates.
//!
//! Slots rendered inside a ```-fenced block escape backslashes and backticks;
//! slots rendered inside double quotes escape backslashes and quotes. Each
//! escape has an exact inverse so a rendered prompt can be parsed back.

pub const FENCE: &str = "```";

pub fn escape_fenced(text: &str) -> String {
    escape(text, '`')
}

pub fn unescape_fenced(text: &str) -> String {
    unescape(text)
}

pub fn escape_quoted(text: &str) -> String {
    escape(text, '"')
}

pub fn unescape_quoted(text: &str) -> String {
    unescape(text)
}

fn escape(text: &str, special: char) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c == '\\' || c == special {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(next) = chars.next() {
                out.push(next);
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// Raw (still escaped) body of the first fenced block that follows `marker`.
pub fn fenced_block_after<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    let start = prompt.find(marker)? + marker.len();
    let rest = &prompt[start..];
    let open = rest.find(FENCE)? + FENCE.len();
    let body = rest[open..].strip_prefix('\n').unwrap_or(&rest[open..]);
    if body.starts_with(FENCE) {
        // empty block rendered as "```\n```"
        return Some("");
    }
    let close = body.find(&format!("\n{FENCE}"))?;
    Some(&body[..close])
}

/// Raw (still escaped) text between the double quotes that follow `marker`.
pub fn quoted_after<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    let start = prompt.find(marker)? + marker.len();
    let rest = prompt[start..].trim_start();
    let body = rest.strip_prefix('"')?;
    let mut escaped = false;
    for (idx, c) in body.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' => escaped = true,
            '"' => return Some(&body[..idx]),
            _ => {}
        }
    }
    None
}
