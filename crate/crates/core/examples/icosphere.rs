//! Builds the icosphere hierarchy and shows the properties the network
//! relies on: closed-form counts, 12 pentagons, prefix vertex ordering and
//! the 7-entry neighbor rings.
//!
//! ```text
//! cargo run --release --example icosphere -- 4
//! ```

use icodiff::mesh::{edge_count, face_count};
use icodiff::{build_icosphere, prefix_count};

fn main() -> icodiff::Result<()> {
    let max_order: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("order must be an integer"))
        .unwrap_or(4);

    println!("order  vertices    edges    faces  pentagons");
    for k in 0..=max_order {
        let mesh = build_icosphere(k)?;
        let pentagons = (0..mesh.vertex_count())
            .filter(|&v| mesh.degree(v) == 5)
            .count();
        assert_eq!(mesh.vertex_count(), prefix_count(k));
        println!(
            "{k:>5} {:>9} {:>8} {:>8} {pentagons:>10}",
            mesh.vertex_count(),
            edge_count(k),
            face_count(k)
        );
    }

    // Every coarser mesh is a prefix of the finer one, so pooling is a slice.
    let fine = build_icosphere(max_order)?;
    let coarse = build_icosphere(max_order.saturating_sub(1))?;
    let shared = coarse.vertex_count();
    assert_eq!(&fine.vertices()[..shared], coarse.vertices());
    println!("\nfirst {shared} vertices of order {max_order} are order {}", coarse.order());

    for v in [0, fine.vertex_count() - 1] {
        println!(
            "vertex {v}: degree {}, ring {:?}",
            fine.degree(v),
            fine.rings()[v]
        );
    }
    Ok(())
}
