//! CoNLL-U reading and writing.
//!
//! Only the ID, FORM, UPOS, HEAD and DEPREL columns are interpreted; the
//! remaining columns are carried through verbatim so that written files
//! keep them.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConlluError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn err(line: usize, message: impl Into<String>) -> ConlluError {
    ConlluError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: String,
    /// Head position; 0 is the dummy root.
    pub head: usize,
    pub deprel: String,
    pub deps: String,
    pub misc: String,
}

impl Token {
    pub fn new(form: &str, upos: &str, head: usize, deprel: &str) -> Self {
        Token {
            form: form.to_string(),
            lemma: "_".into(),
            upos: upos.to_string(),
            xpos: "_".into(),
            feats: "_".into(),
            head,
            deprel: deprel.to_string(),
            deps: "_".into(),
            misc: "_".into(),
        }
    }
}

/// Tokens at positions `1..=n`; position 0 is the implicit root.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sentence {
    pub comments: Vec<String>,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sentence {
            comments: Vec::new(),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Head of every token, index `j - 1` holding the head of token `j`.
    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.deprel.as_str()).collect()
    }

    /// Copy with predicted heads and labels in place of the gold columns.
    pub fn with_predictions(&self, heads: &[usize], labels: &[String]) -> Sentence {
        let mut out = self.clone();
        for ((tok, &h), l) in out.tokens.iter_mut().zip(heads).zip(labels) {
            tok.head = h;
            tok.deprel = l.clone();
        }
        out
    }
}

/// Whether `heads` (head of token `j` at index `j - 1`) forms a tree rooted
/// at 0: every token reaches the root without revisiting a node.
pub fn is_tree(heads: &[usize]) -> bool {
    let n = heads.len();
    if heads.iter().enumerate().any(|(j, &h)| h > n || h == j + 1) {
        return false;
    }
    // 0 = unvisited, 1 = on current path, 2 = known to reach the root
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = heads[v - 1];
        }
        if state[v] == 1 {
            return false;
        }
        for p in path {
            state[p] = 2;
        }
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum HeadPolicy {
    Required,
    Optional,
}

/// Parses annotated CoNLL-U. Every token needs an integer HEAD and the
/// heads of each sentence must form a tree rooted at 0.
pub fn parse_conllu(text: &str) -> Result<Vec<Sentence>, ConlluError> {
    parse_with(text, HeadPolicy::Required)
}

/// Parses CoNLL-U whose HEAD/DEPREL columns may be unannotated (`_`), as
/// for parser input. Missing heads are read as 0 and no tree check is done.
pub fn parse_conllu_unannotated(text: &str) -> Result<Vec<Sentence>, ConlluError> {
    parse_with(text, HeadPolicy::Optional)
}

fn parse_with(text: &str, policy: HeadPolicy) -> Result<Vec<Sentence>, ConlluError> {
    let mut sentences = Vec::new();
    let mut current = Sentence::default();
    // source line of every token in `current`
    let mut token_lines: Vec<usize> = Vec::new();

    let mut finish = |current: &mut Sentence, lines: &mut Vec<usize>| -> Result<(), ConlluError> {
        let sentence = std::mem::take(current);
        let lines = std::mem::take(lines);
        if sentence.tokens.is_empty() {
            return Ok(());
        }
        let n = sentence.len();
        if let Some(j) = sentence.tokens.iter().position(|t| t.head > n) {
            return Err(err(
                lines[j],
                format!("HEAD {} out of range for {n} tokens", sentence.tokens[j].head),
            ));
        }
        if policy == HeadPolicy::Required && !is_tree(&sentence.heads()) {
            return Err(err(lines[0], "gold heads do not form a tree rooted at 0"));
        }
        sentences.push(sentence);
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut current, &mut token_lines)?;
            continue;
        }
        if line.starts_with('#') {
            if current.tokens.is_empty() {
                current.comments.push(line.to_string());
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let cols: Vec<&str> = if cols.len() == 10 {
            cols
        } else {
            line.split_whitespace().collect()
        };
        if cols.len() != 10 {
            return Err(err(line_no, format!("expected 10 columns, found {}", cols.len())));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id
            .parse()
            .map_err(|_| err(line_no, format!("invalid token id {id:?}")))?;
        if id != current.tokens.len() + 1 {
            return Err(err(line_no, format!("token id {id} out of sequence")));
        }
        let head = match (cols[6], policy) {
            ("_", HeadPolicy::Optional) => 0,
            (h, _) => h
                .parse::<usize>()
                .map_err(|_| err(line_no, format!("non-integer HEAD {h:?}")))?,
        };
        if head == id {
            return Err(err(line_no, "token is its own head"));
        }
        current.tokens.push(Token {
            form: cols[1].to_string(),
            lemma: cols[2].to_string(),
            upos: cols[3].to_string(),
            xpos: cols[4].to_string(),
            feats: cols[5].to_string(),
            head,
            deprel: cols[7].to_string(),
            deps: cols[8].to_string(),
            misc: cols[9].to_string(),
        });
        token_lines.push(line_no);
    }
    finish(&mut current, &mut token_lines)?;
    Ok(sentences)
}

/// Writes sentences as CoNLL-U, one blank line after each sentence.
pub fn write_conllu(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for c in &s.comments {
            out.push_str(c);
            out.push('\n');
        }
        for (i, t) in s.tokens.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                i + 1,
                t.form,
                t.lemma,
                t.upos,
                t.xpos,
                t.feats,
                t.head,
                t.deprel,
                t.deps,
                t.misc
            );
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOG: &str = "1\tdog\t_\tNOUN\t_\t_\t2\tnsubj\t_\t_\n2\truns\t_\tVERB\t_\t_\t0\troot\t_\t_\n";

    #[test]
    fn reads_two_token_block() {
        let s = parse_conllu(DOG).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].heads(), vec![2, 0]);
        assert_eq!(s[0].tokens[0].upos, "NOUN");
        assert_eq!(s[0].labels(), vec!["nsubj", "root"]);
    }

    #[test]
    fn space_separated_columns_are_accepted() {
        let text = "1 dog _ NOUN _ _ 2 nsubj _ _\n2 runs _ VERB _ _ 0 root _ _";
        assert_eq!(parse_conllu(text).unwrap()[0].heads(), vec![2, 0]);
    }

    #[test]
    fn empty_input() {
        assert!(parse_conllu("").unwrap().is_empty());
        assert!(parse_conllu("\n\n# only a comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn skips_ranges_and_empty_nodes() {
        let text = "# sent_id = 1\n\
1\tIl\t_\tPRON\t_\t_\t2\tnsubj\t_\t_\n\
2\tparle\t_\tVERB\t_\t_\t0\troot\t_\t_\n\
3-4\tdu\t_\t_\t_\t_\t_\t_\t_\t_\n\
3\tde\t_\tADP\t_\t_\t5\tcase\t_\t_\n\
4\tle\t_\tDET\t_\t_\t5\tdet\t_\t_\n\
4.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\n\
5\tchat\t_\tNOUN\t_\t_\t2\tobl\t_\t_\n";
        let s = parse_conllu(text).unwrap();
        assert_eq!(s[0].len(), 5);
        assert_eq!(s[0].heads(), vec![2, 0, 5, 5, 2]);
        assert_eq!(s[0].comments, vec!["# sent_id = 1"]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad_head = "1\ta\t_\tX\t_\t_\tzz\tdep\t_\t_\n";
        assert_eq!(
            parse_conllu(bad_head).unwrap_err(),
            err(1, "non-integer HEAD \"zz\"")
        );
        let cyclic = "\n1\ta\t_\tX\t_\t_\t2\tdep\t_\t_\n2\tb\t_\tX\t_\t_\t1\tdep\t_\t_\n";
        assert!(matches!(parse_conllu(cyclic), Err(ConlluError::Parse { line: 2, .. })));
        let out_of_range = "1\ta\t_\tX\t_\t_\t5\tdep\t_\t_\n";
        assert!(parse_conllu(out_of_range).is_err());
        let self_loop = "1\ta\t_\tX\t_\t_\t0\troot\t_\t_\n2\tb\t_\tX\t_\t_\t2\tdep\t_\t_\n";
        assert!(matches!(parse_conllu(self_loop), Err(ConlluError::Parse { line: 2, .. })));
    }

    #[test]
    fn unannotated_heads() {
        let text = "1\ta\t_\tX\t_\t_\t_\t_\t_\t_\n2\tb\t_\tX\t_\t_\t_\t_\t_\t_\n";
        assert!(parse_conllu(text).is_err());
        let s = parse_conllu_unannotated(text).unwrap();
        assert_eq!(s[0].heads(), vec![0, 0]);
    }

    #[test]
    fn tree_check() {
        assert!(is_tree(&[2, 0]));
        assert!(is_tree(&[0, 0, 2]));
        assert!(!is_tree(&[2, 1]));
        assert!(!is_tree(&[1]));
        assert!(!is_tree(&[3, 0]));
        assert!(is_tree(&[]));
    }

    fn projected(s: &[Sentence]) -> Vec<Vec<(String, String, usize, String)>> {
        s.iter()
            .map(|s| {
                s.tokens
                    .iter()
                    .map(|t| (t.form.clone(), t.upos.clone(), t.head, t.deprel.clone()))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn round_trip_fixtures() {
        let fixtures = [
            DOG.to_string(),
            "# text = The cat sat.\n1\tThe\tthe\tDET\tDT\t_\t2\tdet\t_\t_\n2\tcat\tcat\tNOUN\tNN\t_\t3\tnsubj\t_\t_\n\
3\tsat\tsit\tVERB\tVBD\t_\t0\troot\t_\tSpaceAfter=No\n4\t.\t.\tPUNCT\t.\t_\t3\tpunct\t_\t_\n\n\
1\tYes\t_\tINTJ\t_\t_\t0\troot\t_\t_\n"
                .to_string(),
            "1\tA\t_\tX\t_\t_\t3\tdep\t_\t_\n2\tB\t_\tX\t_\t_\t3\tdep\t_\t_\n3-4\tCD\t_\t_\t_\t_\t_\t_\t_\t_\n\
3\tC\t_\tY\t_\t_\t0\troot\t_\t_\n4\tD\t_\tY\t_\t_\t3\tdep\t_\t_\n"
                .to_string(),
        ];
        for text in fixtures {
            let once = parse_conllu(&text).unwrap();
            let twice = parse_conllu(&write_conllu(&once)).unwrap();
            assert_eq!(projected(&once), projected(&twice));
            assert_eq!(once, twice);
        }
    }
}
