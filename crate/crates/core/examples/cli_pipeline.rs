//! Drive the `cogt` command line in-process: synth, train, score, verify,
//! with each step's exit code and run manifest.

use cogt::cli::run;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let p = |s: &str| dir.path().join(s).display().to_string();
    std::fs::write(p("small.cfg"), "embed_dim=16\nheads=2\nwarmup_steps=5\n")?;
    let steps: [Vec<String>; 4] = [
        vec!["synth".into(), "--n".into(), "150".into(), "--seed".into(), "2".into(), "--out".into(), p("ds")],
        vec![
            "train".into(), "--dataset".into(), p("ds"), "--mode".into(), "cogt".into(),
            "--config".into(), p("small.cfg"), "--steps".into(), "40".into(), "--out".into(), p("m.ckpt"),
        ],
        vec![
            "score".into(), "--ckpt".into(), p("m.ckpt"), "--tasks".into(), p("ds/tasks.jsonl"),
            "--out".into(), p("results.jsonl"),
        ],
        vec!["verify".into(), "--ckpt".into(), p("m.ckpt"), "--leak-check".into()],
    ];
    for args in steps {
        let code = run(std::iter::once("cogt".to_string()).chain(args.iter().cloned()));
        println!("-> `{}` exited {code}\n", args[0]);
        if code != 0 {
            return Err(format!("{} failed", args[0]).into());
        }
    }
    let manifest = std::fs::read_to_string(p("m.manifest.json"))?;
    println!("train manifest:\n{manifest}");
    Ok(())
}
