//! Read a CoNLL-U parse, build a subword vocabulary, and show how split
//! words inherit the head link and relation of the word they came from.

use cogt::conllu::{parse_conllu, serialize_conllu};
use cogt::subword::{build_vocab, tokenize_tree};

const PARSE: &str = "\
# sent_id = bird-1
# text = A brown bird with a yellow head
1\tA\ta\tDET\t_\t_\t3\tdet\t_\t_
2\tbrown\tbrown\tADJ\t_\t_\t3\tamod\t_\t_
3\tbird\tbird\tNOUN\t_\t_\t0\troot\t_\t_
4\twith\twith\tADP\t_\t_\t7\tcase\t_\t_
5\ta\ta\tDET\t_\t_\t7\tdet\t_\t_
6\tyellow\tyellow\tADJ\t_\t_\t7\tamod\t_\t_
7\thead\thead\tNOUN\t_\t_\t3\tnmod\t_\t_
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let trees = parse_conllu(PARSE)?;
    let tree = &trees[0];
    println!("{} words, root `{}`", tree.len(), tree.nodes()[tree.root()].form);
    for (i, node) in tree.nodes().iter().enumerate() {
        let head = tree.head(i).map_or("ROOT".to_string(), |h| tree.nodes()[h].form.clone());
        println!("  {:>7} -{}-> {head}  (depth {})", node.form, node.category.label(), tree.depth(i));
    }

    // A deliberately tiny vocabulary so that some words split into pieces.
    let corpus = ["a brown bird", "a bird with a head", "yell low"];
    let vocab = build_vocab(&corpus, 24)?;
    let tokenized = tokenize_tree(tree, &vocab);
    println!("\n{} tokens over a {}-piece vocabulary:", tokenized.len(), vocab.len());
    for (k, tok) in tokenized.tokens().iter().enumerate() {
        let head = tokenized.heads()[k].map_or("-".to_string(), |h| h.to_string());
        println!(
            "  [{k:>2}] {:<8} {:<6} head {head:>2}  from `{}`",
            vocab.piece(tok.piece),
            tok.category.label(),
            tok.surface
        );
    }
    println!("detokenized: {}", tokenized.detokenize().join(" "));
    print!("\nround trip:\n{}", serialize_conllu(&trees));
    Ok(())
}
