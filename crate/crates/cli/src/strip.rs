//! Side-by-side SVG of input, ground truth and prediction for one frame.

use base64::Engine;

use seqseg::{Error, LabelMap, Result, Tensor4, IGNORE_LABEL};

/// Display colours per class id; ignore pixels are white.
pub const PALETTE: [[u8; 3]; 4] = [[70, 70, 70], [220, 90, 60], [60, 120, 220], [90, 180, 80]];

const SCALE: usize = 4;
const CAPTION: usize = 18;

fn png_data_uri(width: usize, height: usize, rgb: &[u8]) -> Result<String> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let err = |e: png::EncodingError| Error::Data(format!("png encoding failed: {e}"));
        let mut w = enc.write_header().map_err(err)?;
        w.write_image_data(rgb).map_err(err)?;
    }
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(&buf)
    ))
}

fn image_bytes(img: &Tensor4) -> Vec<u8> {
    let d = img.dims();
    let mut out = Vec::with_capacity(3 * d.h * d.w);
    for y in 0..d.h {
        for x in 0..d.w {
            for c in 0..3 {
                out.push((img.at(0, c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

pub fn label_bytes(labels: &[u8]) -> Vec<u8> {
    labels
        .iter()
        .flat_map(|&l| {
            if l == IGNORE_LABEL {
                [255, 255, 255]
            } else {
                PALETTE.get(l as usize).copied().unwrap_or([0, 0, 0])
            }
        })
        .collect()
}

pub fn strip_svg(image: &Tensor4, truth: &LabelMap, pred: &LabelMap) -> Result<String> {
    let (h, w) = (truth.h, truth.w);
    let panels = [
        ("input", png_data_uri(w, h, &image_bytes(image))?),
        ("truth", png_data_uri(w, h, &label_bytes(&truth.data))?),
        ("prediction", png_data_uri(w, h, &label_bytes(&pred.data))?),
    ];
    let (pw, ph) = (w * SCALE, h * SCALE);
    let total_w = 3 * pw + 4 * 8;
    let total_h = ph + CAPTION + 8;
    let mut s = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
         xmlns:xlink=\"http://www.w3.org/1999/xlink\" version=\"1.1\" width=\"{total_w}\" height=\"{total_h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (i, (caption, uri)) in panels.iter().enumerate() {
        let x = 8 + i * (pw + 8);
        s.push_str(&format!(
            "<text x=\"{}\" y=\"14\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{caption}</text>\n\
             <image class=\"panel\" data-panel=\"{caption}\" x=\"{x}\" y=\"{CAPTION}\" width=\"{pw}\" height=\"{ph}\" \
             style=\"image-rendering:pixelated\" preserveAspectRatio=\"none\" xlink:href=\"{uri}\"/>\n",
            x + pw / 2
        ));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
