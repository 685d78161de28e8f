use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ids::ItemId;
use crate::math::dot;
use crate::topk::select_top_k;

/// Default number of history items shown to the oracle.
pub const DEFAULT_CONTEXT_LEN: usize = 10;

const PREFIX: &str = "Given the user interacted with [";
const MIDDLE: &str = "], determine whether the user will interacted the [";
const SUFFIX: &str = "] by answering Yes or No.";

/// The `len` history items most similar to the query item by `f_q · f_j`,
/// ties to the lower item id. The query item itself never appears.
pub fn build_context(
    history: &[ItemId],
    query: ItemId,
    item_vectors: &EmbeddingTable,
    len: usize,
) -> Vec<ItemId> {
    let f_q = item_vectors.row(query.index());
    let scored = history
        .iter()
        .filter(|&&j| j != query)
        .map(|&j| (j, dot(f_q, item_vectors.row(j.index()))));
    select_top_k(scored, len)
        .into_iter()
        .map(|(j, _)| j)
        .collect()
}

fn quote(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
}

/// Renders the simulation prompt. Context titles are double-quoted with
/// `"` and `\` backslash-escaped, and joined by `", "`.
pub fn render_prompt(titles: &[&str], item_text: &str) -> String {
    let mut s = String::with_capacity(
        PREFIX.len() + MIDDLE.len() + SUFFIX.len() + item_text.len() + 16 * titles.len(),
    );
    s.push_str(PREFIX);
    for (k, t) in titles.iter().enumerate() {
        if k > 0 {
            s.push_str(", ");
        }
        quote(t, &mut s);
    }
    s.push_str(MIDDLE);
    s.push_str(item_text);
    s.push_str(SUFFIX);
    s
}

/// Reads a yes/no answer from the first alphabetic token, ignoring case.
pub fn parse_answer(raw: &str) -> Result<u8> {
    let token: String = raw
        .chars()
        .skip_while(|c| !c.is_alphabetic())
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match token.as_str() {
        "yes" => Ok(1),
        "no" => Ok(0),
        _ => Err(Error::UnparseableAnswer(raw.to_string())),
    }
}

/// Hex FNV-1a digest of a prompt, used as a cache key component.
pub fn prompt_hash(prompt: &str) -> String {
    format!("{:016x}", crate::content::fnv1a(prompt.as_bytes(), 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Inverse of `render_prompt`, for the injectivity property.
    fn parse_prompt(p: &str) -> Option<(Vec<String>, String)> {
        let rest = p.strip_prefix(PREFIX)?;
        let mut titles = Vec::new();
        let mut chars = rest.char_indices().peekable();
        let body_end;
        loop {
            match chars.next()? {
                (_, '"') => {
                    let mut t = String::new();
                    loop {
                        match chars.next()? {
                            (_, '\\') => t.push(chars.next()?.1),
                            (_, '"') => break,
                            (_, c) => t.push(c),
                        }
                    }
                    titles.push(t);
                    match chars.next()? {
                        (_, ',') => {
                            chars.next().filter(|c| c.1 == ' ')?;
                        }
                        (i, ']') => {
                            body_end = i;
                            break;
                        }
                        _ => return None,
                    }
                }
                (i, ']') if titles.is_empty() => {
                    body_end = i;
                    break;
                }
                _ => return None,
            }
        }
        let tail = &rest[body_end..];
        let item = tail.strip_prefix(MIDDLE)?.strip_suffix(SUFFIX)?;
        Some((titles, item.to_string()))
    }

    #[test]
    fn two_titles() {
        assert_eq!(
            render_prompt(&["A", "B"], "C"),
            "Given the user interacted with [\"A\", \"B\"], determine whether the user will interacted the [C] by answering Yes or No."
        );
    }

    #[test]
    fn empty_context() {
        let p = render_prompt(&[], "C");
        assert!(p.starts_with("Given the user interacted with [], determine "));
        assert!(p.contains("by answering Yes or No"));
    }

    #[test]
    fn quotes_are_escaped() {
        assert_eq!(
            render_prompt(&["say \"hi\"", "a\\b"], "x"),
            "Given the user interacted with [\"say \\\"hi\\\"\", \"a\\\\b\"], determine whether the user will interacted the [x] by answering Yes or No."
        );
    }

    #[test]
    fn answers() {
        assert_eq!(parse_answer("No, because...").unwrap(), 0);
        assert_eq!(parse_answer("  YES.").unwrap(), 1);
        assert_eq!(parse_answer("\n\"yes\"").unwrap(), 1);
        assert_eq!(parse_answer("no").unwrap(), 0);
        for bad in ["Yeah", "", "42", "Nope no", "maybe yes"] {
            assert!(
                matches!(parse_answer(bad), Err(Error::UnparseableAnswer(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn context_ranking() {
        let t = EmbeddingTable::from_vec(5, 1, vec![1.0, 3.0, 2.0, 3.0, 0.5]).unwrap();
        let hist = [ItemId(0), ItemId(1), ItemId(2), ItemId(3)];
        assert_eq!(
            build_context(&hist, ItemId(4), &t, 10),
            vec![ItemId(1), ItemId(3), ItemId(2), ItemId(0)]
        );
        assert_eq!(
            build_context(&hist, ItemId(4), &t, 2),
            vec![ItemId(1), ItemId(3)]
        );
        assert!(build_context(&[], ItemId(4), &t, 3).is_empty());
        assert_eq!(build_context(&hist, ItemId(1), &t, 1), vec![ItemId(3)]);
    }

    proptest! {
        #[test]
        fn prompt_is_injective(titles in proptest::collection::vec(".{0,8}", 0..5), item in ".{1,12}") {
            let refs: Vec<&str> = titles.iter().map(String::as_str).collect();
            let p = render_prompt(&refs, &item);
            prop_assert_eq!(parse_prompt(&p), Some((titles, item)));
        }
    }
}
