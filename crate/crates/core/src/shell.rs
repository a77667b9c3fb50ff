//! Small helpers for looking at shell command strings without executing them.

/// Operator that joins a segment to the one after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connector {
    And,
    Or,
    Seq,
    Pipe,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub text: String,
    pub next: Connector,
}

/// Splits a command line on top-level `&&`, `||`, `;`, `|` and newlines,
/// ignoring operators inside single or double quotes.
pub fn split_segments(cmd: &str) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut current = String::new();
    let mut chars = cmd.chars().peekable();
    let mut single = false;
    let mut double = false;

    let push = |current: &mut String, next: Connector, segments: &mut Vec<Segment>| {
        let text = current.trim().to_string();
        if !text.is_empty() {
            segments.push(Segment { text, next });
        } else if let Some(last) = segments.last_mut() {
            if last.next == Connector::End || last.next == Connector::Seq {
                last.next = next;
            }
        }
        current.clear();
    };

    while let Some(c) = chars.next() {
        match c {
            '\\' if !single => {
                current.push(c);
                if let Some(n) = chars.next() {
                    if n == '\n' {
                        current.pop();
                        current.push(' ');
                    } else {
                        current.push(n);
                    }
                }
            }
            '\'' if !double => {
                single = !single;
                current.push(c);
            }
            '"' if !single => {
                double = !double;
                current.push(c);
            }
            _ if single || double => current.push(c),
            '&' if chars.peek() == Some(&'&') => {
                chars.next();
                push(&mut current, Connector::And, &mut segments);
            }
            '|' if chars.peek() == Some(&'|') => {
                chars.next();
                push(&mut current, Connector::Or, &mut segments);
            }
            '|' => push(&mut current, Connector::Pipe, &mut segments),
            ';' | '\n' => push(&mut current, Connector::Seq, &mut segments),
            _ => current.push(c),
        }
    }
    push(&mut current, Connector::End, &mut segments);
    if let Some(last) = segments.last_mut() {
        last.next = Connector::End;
    }
    segments
}

/// Shell words of one segment. Falls back to whitespace splitting when the
/// segment has unbalanced quotes.
pub fn words(segment: &str) -> Vec<String> {
    shlex::split(segment).unwrap_or_else(|| segment.split_whitespace().map(str::to_string).collect())
}

/// Words with leading `VAR=value` assignments and `env`/`exec`/`sudo`-style
/// wrappers removed, so the first word is the program being run.
pub fn program_words(segment: &str) -> Vec<String> {
    let mut w = words(segment);
    loop {
        match w.first().map(String::as_str) {
            Some(first) if is_assignment(first) => {
                w.remove(0);
            }
            Some("env") | Some("exec") | Some("command") if w.len() > 1 && w[1] != "-v" => {
                w.remove(0);
            }
            _ => break,
        }
    }
    w
}

fn is_assignment(word: &str) -> bool {
    match word.split_once('=') {
        Some((name, _)) => {
            !name.is_empty()
                && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                && !name.starts_with(|c: char| c.is_ascii_digit())
        }
        None => false,
    }
}

/// Basename of a program word (`/usr/bin/python3` -> `python3`).
pub fn basename(word: &str) -> &str {
    word.rsplit('/').next().unwrap_or(word)
}

/// Lower-cased alphanumeric tokens of length >= 2, used for the
/// reason/command overlap rule.
pub fn overlap_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .filter(|t| t.len() >= 2)
        .map(|t| t.to_ascii_lowercase())
        .collect()
}

/// Single-quotes a string for safe inclusion in a POSIX shell script.
pub fn quote(s: &str) -> String {
    if !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_./=:,+@%".contains(c)) {
        return s.to_string();
    }
    format!("'{}'", s.replace('\'', r"'\''"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_operators_outside_quotes() {
        let segs = split_segments("cd sub && echo 'a && b' | wc -l; ls || true");
        let texts: Vec<_> = segs.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, ["cd sub", "echo 'a && b'", "wc -l", "ls", "true"]);
        assert_eq!(segs[0].next, Connector::And);
        assert_eq!(segs[1].next, Connector::Pipe);
        assert_eq!(segs[2].next, Connector::Seq);
        assert_eq!(segs[3].next, Connector::Or);
        assert_eq!(segs[4].next, Connector::End);
    }

    #[test]
    fn program_words_skip_assignments() {
        assert_eq!(program_words("FOO=1 BAR=x pytest -q"), ["pytest", "-q"]);
        assert_eq!(program_words("env CI=1 npm test"), ["npm", "test"]);
        assert_eq!(program_words("command -v sh"), ["command", "-v", "sh"]);
    }

    #[test]
    fn quoting_round_trips_through_shlex() {
        for s in ["plain", "with space", "it's", "", "$HOME"] {
            assert_eq!(shlex::split(&quote(s)).unwrap(), vec![s.to_string()]);
        }
    }

    #[test]
    fn overlap_tokens_drop_short_flags() {
        assert_eq!(
            overlap_tokens("python3 -m pip install -r requirements.txt"),
            ["python3", "pip", "install", "requirements", "txt"]
        );
    }
}
