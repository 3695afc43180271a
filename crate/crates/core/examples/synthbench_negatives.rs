//! Generate a synthetic scene, its gold caption and tree, the hard
//! negatives of every tier, and its visual feature encoding.

use cogt::scorer::Tier;
use cogt::seed::rng_for;
use cogt::synthbench::{describe, make_negatives, Scene, SceneEncoder, SHAPES};

fn main() {
    let scene = (0..)
        .map(Scene::random)
        .find(|s| s.objects.len() == 3)
        .expect("some seed gives three objects");
    let positive = describe(&scene);
    println!("scene seed {}: {} objects", scene.seed, scene.objects.len());
    for o in &scene.objects {
        println!("  {:?} ({})", o, SHAPES[o.shape]);
    }
    println!("caption: {}", positive.text());
    let tree = positive.tree("demo");
    let links: Vec<String> = (0..tree.len())
        .filter_map(|i| tree.head(i).map(|h| format!("{}->{}", tree.nodes()[i].form, tree.nodes()[h].form)))
        .collect();
    println!("tree: {}\n", links.join(" "));

    for tier in Tier::ALL {
        let mut rng = rng_for(1, &format!("example/{tier}"));
        match make_negatives(&scene, &positive, tier, &mut rng) {
            Ok(negs) => {
                println!("{tier} ({} negatives)", negs.len());
                for n in negs.iter().take(3) {
                    println!("  {}", n.text());
                }
            }
            Err(e) => println!("{tier}: {e}"),
        }
    }

    let encoder = SceneEncoder::new(3, 32, 0.05);
    let v = encoder.encode(&scene, "demo");
    println!("\nfeatures: {} slots x {} dims, {} patches", v.slots(), v.dim(), v.patches());
}
