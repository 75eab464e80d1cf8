//! Lexical sanity check: brackets balance once strings and comments are
//! skipped, and no string or block comment is left open.

use crate::corpus::LanguageTag;

#[derive(Debug, Clone)]
struct Profile {
    line_comments: &'static [&'static str],
    block_comment: Option<(&'static str, &'static str)>,
    /// Delimiters tried longest first; `(open, close, escapes)`.
    strings: &'static [(&'static str, &'static str, bool)],
    brackets: &'static [(char, char)],
    /// `'` starts a char literal only when it closes within a few chars;
    /// otherwise it is a lifetime or label.
    quote_char_literal: bool,
    /// Line comments must start a word (shell `#`).
    comment_needs_boundary: bool,
}

const ALL_BRACKETS: &[(char, char)] = &[('(', ')'), ('[', ']'), ('{', '}')];
const C_STRINGS: &[(&str, &str, bool)] = &[("\"", "\"", true), ("'", "'", true)];

fn profile(lang: &LanguageTag) -> Profile {
    let c_like = Profile {
        line_comments: &["//"],
        block_comment: Some(("/*", "*/")),
        strings: C_STRINGS,
        brackets: ALL_BRACKETS,
        quote_char_literal: false,
        comment_needs_boundary: false,
    };
    match lang.as_str().to_ascii_lowercase().as_str() {
        "python" => Profile {
            line_comments: &["#"],
            block_comment: None,
            strings: &[
                ("\"\"\"", "\"\"\"", true),
                ("'''", "'''", true),
                ("\"", "\"", true),
                ("'", "'", true),
            ],
            ..c_like
        },
        "ruby" => Profile {
            line_comments: &["#"],
            block_comment: None,
            ..c_like
        },
        "shell" => Profile {
            line_comments: &["#"],
            block_comment: None,
            strings: &[("\"", "\"", true), ("'", "'", false)],
            brackets: &[('[', ']'), ('{', '}')],
            comment_needs_boundary: true,
            ..c_like
        },
        "sql" => Profile {
            line_comments: &["--"],
            strings: &[("'", "'", false), ("\"", "\"", false)],
            ..c_like
        },
        "php" => Profile {
            line_comments: &["//", "#"],
            ..c_like
        },
        "javascript" | "typescript" => Profile {
            strings: &[("\"", "\"", true), ("'", "'", true), ("`", "`", true)],
            ..c_like
        },
        "go" => Profile {
            strings: &[("\"", "\"", true), ("'", "'", true), ("`", "`", false)],
            ..c_like
        },
        "rust" => Profile {
            strings: &[("\"", "\"", true)],
            quote_char_literal: true,
            ..c_like
        },
        "kotlin" | "swift" | "scala" | "dart" => Profile {
            strings: &[
                ("\"\"\"", "\"\"\"", true),
                ("'''", "'''", true),
                ("\"", "\"", true),
                ("'", "'", true),
            ],
            quote_char_literal: lang.as_str().eq_ignore_ascii_case("scala"),
            ..c_like
        },
        "jupyter notebook" => Profile {
            line_comments: &[],
            block_comment: None,
            strings: &[("\"", "\"", true)],
            ..c_like
        },
        _ => c_like,
    }
}

/// Length in bytes of a char literal starting at `s` (which begins with
/// `'`), if there is one.
fn char_literal_len(s: &str) -> Option<usize> {
    let mut it = s.char_indices().skip(1);
    let (_, c) = it.next()?;
    if c == '\\' {
        // escape: scan up to the closing quote within a short window
        for (i, c) in it.take(10) {
            if c == '\'' {
                return Some(i + 1);
            }
        }
        return None;
    }
    match it.next() {
        Some((i, '\'')) => Some(i + 1),
        _ => None,
    }
}

pub fn check(code: &str, lang: &LanguageTag) -> Result<(), String> {
    let p = profile(lang);
    let mut stack: Vec<(char, usize)> = Vec::new();
    let mut line = 1usize;
    let mut i = 0usize;
    let bytes_len = code.len();
    let mut prev_boundary = true;
    'outer: while i < bytes_len {
        let rest = &code[i..];
        let c = rest.chars().next().unwrap();

        if let Some((open, close)) = p.block_comment {
            if let Some(body) = rest.strip_prefix(open) {
                match body.find(close) {
                    Some(end) => {
                        let skipped = &rest[..open.len() + end + close.len()];
                        line += skipped.matches('\n').count();
                        i += skipped.len();
                        prev_boundary = true;
                        continue;
                    }
                    None => return Err(format!("unterminated block comment at line {line}")),
                }
            }
        }
        for lc in p.line_comments {
            if rest.starts_with(lc) && (!p.comment_needs_boundary || prev_boundary) {
                let end = rest.find('\n').unwrap_or(rest.len());
                i += end;
                continue 'outer;
            }
        }
        if p.quote_char_literal && c == '\'' {
            i += char_literal_len(rest).unwrap_or(1);
            prev_boundary = false;
            continue;
        }
        for &(open, close, escapes) in p.strings {
            if rest.starts_with(open) {
                let start_line = line;
                let mut j = open.len();
                loop {
                    let Some(next) = rest[j..].chars().next() else {
                        return Err(format!("unterminated string starting at line {start_line}"));
                    };
                    if escapes && next == '\\' {
                        j += 1;
                        if let Some(e) = rest[j..].chars().next() {
                            if e == '\n' {
                                line += 1;
                            }
                            j += e.len_utf8();
                        }
                        continue;
                    }
                    if rest[j..].starts_with(close) {
                        j += close.len();
                        break;
                    }
                    if next == '\n' {
                        line += 1;
                    }
                    j += next.len_utf8();
                }
                i += j;
                prev_boundary = false;
                continue 'outer;
            }
        }
        if let Some(&(o, _)) = p.brackets.iter().find(|(o, _)| *o == c) {
            stack.push((o, line));
        } else if let Some(&(o, cl)) = p.brackets.iter().find(|(_, cl)| *cl == c) {
            match stack.pop() {
                Some((top, _)) if top == o => {}
                Some((top, l)) => {
                    return Err(format!("'{cl}' at line {line} closes '{top}' from line {l}"));
                }
                None => return Err(format!("unmatched '{cl}' at line {line}")),
            }
        }
        if c == '\n' {
            line += 1;
        }
        prev_boundary = c.is_whitespace() || matches!(c, ';' | '(' | '{' | '|' | '&');
        i += c.len_utf8();
    }
    match stack.pop() {
        Some((o, l)) => Err(format!("unclosed '{o}' from line {l}")),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(code: &str, lang: &str) -> bool {
        check(code, &LanguageTag::new(lang)).is_ok()
    }

    #[test]
    fn balanced_and_unbalanced() {
        assert!(ok("def f(x):\n    return [x, {1: 2}]\n", "Python"));
        assert!(!ok("def f(x:\n    return x\n", "Python"));
        assert!(!ok("int main() { return 0; ", "C"));
        assert!(!ok("(]", "Go"));
    }

    #[test]
    fn strings_and_comments_are_skipped() {
        assert!(ok("s = \"(\"  # )\n", "Python"));
        assert!(ok("x = '''\n(\n'''\n", "Python"));
        assert!(ok("let s = \"}\"; /* { */ // (\n", "Rust"));
        assert!(ok("const t = `${a}(`;", "JavaScript"));
        assert!(ok("SELECT '(' -- )\nFROM t;", "SQL"));
        assert!(!ok("s = \"open", "Python"));
        assert!(!ok("/* never closed", "Java"));
    }

    #[test]
    fn rust_lifetimes_and_chars() {
        assert!(ok("fn f<'a>(x: &'a str) -> char { '{' }", "Rust"));
        assert!(ok("let c = '\\n'; let d = '\\u{1F600}';", "Rust"));
        assert!(ok("'outer: loop { break 'outer; }", "Rust"));
    }

    #[test]
    fn shell_parens_are_not_checked() {
        assert!(ok("case $x in\n  a) echo a ;;\nesac\n", "Shell"));
        assert!(ok("echo $# items # count\n", "Shell"));
        assert!(!ok("if [ -f x; then echo; fi", "Shell"));
    }
}
