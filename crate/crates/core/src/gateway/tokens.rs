//! Local token estimation.

use crate::prompt::Message;

/// ⌈UTF-8 bytes / 4⌉.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

/// Token counting strategy. [`ByteEstimator`] is the default; an exact
/// tokenizer can be plugged in instead.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ByteEstimator;

impl TokenCounter for ByteEstimator {
    fn count(&self, text: &str) -> u64 {
        estimate_tokens(text)
    }
}

/// Counts a message body line by line, so that a batch of questions costs the
/// sum of its question lines.
pub fn content_tokens(counter: &dyn TokenCounter, content: &str) -> u64 {
    content.split('\n').map(|line| counter.count(line)).sum()
}

pub fn prompt_tokens(counter: &dyn TokenCounter, messages: &[Message]) -> u64 {
    messages
        .iter()
        .map(|m| content_tokens(counter, &m.content))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::Role;

    #[test]
    fn byte_estimate() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcdefgh"), 2);
        assert_eq!(estimate_tokens("abcdefghi"), 3);
        assert_eq!(estimate_tokens(&"x".repeat(4096)), 1024);
        // bytes, not chars
        assert_eq!(estimate_tokens("éé"), 1);
    }

    #[test]
    fn line_additivity() {
        let a = "Question 1: aaaa";
        let b = "Question 2: bbbbbbb";
        let joined = format!("{a}\n{b}");
        assert_eq!(
            content_tokens(&ByteEstimator, &joined),
            estimate_tokens(a) + estimate_tokens(b)
        );
        let msgs = [
            Message::new(Role::System, "abcd"),
            Message::new(Role::User, joined),
        ];
        assert_eq!(
            prompt_tokens(&ByteEstimator, &msgs),
            1 + estimate_tokens(a) + estimate_tokens(b)
        );
    }
}
