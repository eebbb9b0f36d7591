//! Bundle generation: pages, link graph, redirects and the ground-truth
//! manifest, all as a pure function of the spec.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{MockWebError, MockWebSpec};

/// Named in the manifest so bundles stay reproducible across releases.
const PRNG_NAME: &str = "chacha20";

const LEXICON: &[&str] = &[
    "journal", "campagne", "politique", "analyse", "dossier", "scrutin", "débat", "opinion",
    "tribune", "économie", "société", "culture", "monde", "région", "ville", "conseil",
    "projet", "réforme", "budget", "rapport", "enquête", "entretien", "chronique", "lettre",
    "semaine", "annonce", "programme", "réunion", "communiqué", "article", "édition", "élu",
    "mairie", "assemblée", "sénat", "candidat", "réaction", "synthèse", "actualité", "presse",
];

const DEFAULT_TLDS: &[&str] = &["com", "org", "net", "fr"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockPage {
    pub host: String,
    pub path: String,
    pub status: u16,
    pub body: String,
    /// What the crawler's text extraction should see for this page.
    pub expected_text: String,
    pub keyword: Option<String>,
    pub robots_disallowed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RedirectChain {
    /// (host, path) of every hop, first hop is the entry URL.
    pub hops: Vec<(String, String)>,
    /// Page id the last hop points at.
    pub target: usize,
}

#[derive(Debug, Clone)]
pub struct MockWebBundle {
    pub spec: MockWebSpec,
    pub pages: Vec<MockPage>,
    pub page_urls: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub seed_ids: Vec<usize>,
    /// BFS depth from the designated seeds; unreachable pages are absent.
    pub depths: HashMap<usize, u32>,
    pub redirects: Vec<RedirectChain>,
    /// robots.txt body per host.
    pub robots: HashMap<String, String>,
}

struct DomainTable {
    hosts: Vec<String>,
    tlds: Vec<String>,
}

fn build_domains(spec: &MockWebSpec) -> DomainTable {
    let mut pool: Vec<String> = Vec::new();
    for region in &spec.keywords {
        if !pool.contains(&region.tld) {
            pool.push(region.tld.clone());
        }
    }
    for tld in DEFAULT_TLDS {
        if !pool.contains(&tld.to_string()) {
            pool.push(tld.to_string());
        }
    }
    let mut hosts = Vec::with_capacity(spec.domains);
    let mut tlds = Vec::with_capacity(spec.domains);
    for i in 0..spec.domains {
        let tld = pool[i % pool.len()].clone();
        hosts.push(format!("site{i}.{tld}"));
        tlds.push(tld);
    }
    DomainTable { hosts, tlds }
}

fn page_rng(seed: u64, stream: u64, id: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(
        seed.wrapping_mul(0x0100_0000_01b3)
            .wrapping_add(stream.wrapping_mul(0x9e37_79b9))
            .wrapping_add(id + 1),
    )
}

fn words(rng: &mut ChaCha20Rng, count: usize) -> Vec<String> {
    (0..count)
        .map(|_| LEXICON.choose(rng).unwrap().to_string())
        .collect()
}

impl MockWebBundle {
    pub fn generate(spec: &MockWebSpec) -> Result<Self, MockWebError> {
        spec.validate()?;
        let n = spec.pages;
        let domains = build_domains(spec);

        // Page layout: seeds first; keyword pages spread evenly over the id
        // range so id-adjacent discovery (the spine) cannot cluster them.
        let mut keyword_of: Vec<Option<usize>> = vec![None; n];
        let seed_ids: Vec<usize> = (0..spec.seed_pages.min(n)).collect();
        let assignable = n - seed_ids.len();
        for (region_idx, region) in spec.keywords.iter().enumerate() {
            let count = ((region.fraction * n as f64).round() as usize).min(assignable);
            for j in 0..count {
                let mut id = seed_ids.len() + j * assignable / count.max(1);
                while id < n && keyword_of[id].is_some() {
                    id += 1;
                }
                if id < n {
                    keyword_of[id] = Some(region_idx);
                }
            }
        }

        // Domain assignment: keyword pages go to domains of their region's
        // TLD, everything else round-robins over all domains.
        let mut domain_of: Vec<usize> = vec![0; n];
        let mut region_cursors: Vec<usize> = vec![0; spec.keywords.len()];
        for id in 0..n {
            match keyword_of[id] {
                Some(region_idx) => {
                    let tld = &spec.keywords[region_idx].tld;
                    let matching: Vec<usize> = (0..spec.domains)
                        .filter(|d| &domains.tlds[*d] == tld)
                        .collect();
                    let slot = region_cursors[region_idx] % matching.len();
                    region_cursors[region_idx] += 1;
                    domain_of[id] = matching[slot];
                }
                None => domain_of[id] = id % spec.domains,
            }
        }

        // Error statuses and robots exclusions, over plain non-seed pages.
        let mut status: Vec<u16> = vec![200; n];
        let mut robots_disallowed: Vec<bool> = vec![false; n];
        let mut pick_rng = page_rng(spec.seed, 1, 0);
        let mut candidates: Vec<usize> = (0..n)
            .filter(|id| !seed_ids.contains(id) && keyword_of[*id].is_none())
            .collect();
        candidates.shuffle(&mut pick_rng);
        let mut pick_cursor = 0usize;
        for e in &spec.error_pages {
            let count = (e.fraction * n as f64).round() as usize;
            for _ in 0..count {
                if pick_cursor >= candidates.len() {
                    break;
                }
                status[candidates[pick_cursor]] = e.status;
                pick_cursor += 1;
            }
        }
        let robots_count = (spec.robots_disallow * n as f64).round() as usize;
        for _ in 0..robots_count {
            if pick_cursor >= candidates.len() {
                break;
            }
            robots_disallowed[candidates[pick_cursor]] = true;
            pick_cursor += 1;
        }

        // Paths and canonical URLs.
        let mut paths: Vec<String> = Vec::with_capacity(n);
        for id in 0..n {
            let slug = match keyword_of[id] {
                Some(region_idx) => format!("{}-story-{id}.html", spec.keywords[region_idx].keyword),
                None => format!("page-{id}.html"),
            };
            let prefix = if robots_disallowed[id] { "/private/" } else { "/" };
            paths.push(format!("{prefix}{slug}"));
        }
        let authority = |host: &str| {
            if spec.port == 80 {
                host.to_string()
            } else {
                format!("{host}:{}", spec.port)
            }
        };
        let page_urls: Vec<String> = (0..n)
            .map(|id| format!("http://{}{}", authority(&domains.hosts[domain_of[id]]), paths[id]))
            .collect();

        // Link graph: a cyclic spine from every 200-status page keeps the
        // web connected, plus uniform random extra edges. Error pages have
        // no out-edges, matching what a crawler can observe.
        let mut edge_rng = page_rng(spec.seed, 2, 0);
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for source in 0..n {
            if status[source] != 200 {
                continue;
            }
            let mut seen: HashSet<usize> = HashSet::new();
            if n > 1 {
                let spine = (source + 1) % n;
                seen.insert(spine);
                edges.push((source, spine));
            }
            let extra = edge_rng.gen_range(spec.out_degree.0..=spec.out_degree.1);
            for _ in 0..extra {
                let target = edge_rng.gen_range(0..n);
                if target != source && seen.insert(target) {
                    edges.push((source, target));
                }
            }
        }

        // Ground-truth depths.
        let mut adjacency: HashMap<usize, Vec<usize>> = HashMap::new();
        for (s, t) in &edges {
            adjacency.entry(*s).or_default().push(*t);
        }
        let mut depths: HashMap<usize, u32> = HashMap::new();
        let mut queue: VecDeque<usize> = VecDeque::new();
        for seed in &seed_ids {
            depths.insert(*seed, 0);
            queue.push_back(*seed);
        }
        while let Some(node) = queue.pop_front() {
            let d = depths[&node];
            if let Some(next) = adjacency.get(&node) {
                for t in next {
                    if !depths.contains_key(t) {
                        depths.insert(*t, d + 1);
                        queue.push_back(*t);
                    }
                }
            }
        }

        // Page content. Every page's words come from a page-local stream so
        // content is independent of generation order.
        let mut out_links: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (s, t) in &edges {
            out_links[*s].push(*t);
        }
        let mut pages: Vec<MockPage> = Vec::with_capacity(n);
        for id in 0..n {
            let host = domains.hosts[domain_of[id]].clone();
            if status[id] != 200 {
                let text = format!("error {}", status[id]);
                let body = format!(
                    "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{text}</title></head>\n<body><h1>{text}</h1></body>\n</html>\n"
                );
                pages.push(MockPage {
                    host,
                    path: paths[id].clone(),
                    status: status[id],
                    body,
                    expected_text: text,
                    keyword: keyword_of[id].map(|r| spec.keywords[r].keyword.clone()),
                    robots_disallowed: robots_disallowed[id],
                });
                continue;
            }
            let mut rng = page_rng(spec.seed, 3, id as u64);
            let mut expected: Vec<String> = Vec::new();
            let title = match keyword_of[id] {
                Some(r) => format!("{} {} {id}", spec.keywords[r].keyword, words(&mut rng, 1)[0]),
                None => format!("{} {} {id}", words(&mut rng, 1)[0], words(&mut rng, 1)[0]),
            };
            expected.extend(title.split_whitespace().map(str::to_string));
            let filler_count = rng.gen_range(8..=14);
            let filler = words(&mut rng, filler_count);
            expected.extend(filler.iter().cloned());

            let mut items = String::new();
            for target in &out_links[id] {
                let pre_count = rng.gen_range(2..=4);
                let pre = words(&mut rng, pre_count);
                let post_count = rng.gen_range(2..=4);
                let post = words(&mut rng, post_count);
                let anchor = match keyword_of[*target] {
                    Some(r) => format!(
                        "{} {} {target}",
                        spec.keywords[r].keyword,
                        words(&mut rng, 1)[0]
                    ),
                    None => format!("{} {target}", words(&mut rng, 1)[0]),
                };
                let href = if domain_of[*target] == domain_of[id] {
                    paths[*target].clone()
                } else {
                    page_urls[*target].clone()
                };
                expected.extend(pre.iter().cloned());
                expected.extend(anchor.split_whitespace().map(str::to_string));
                expected.extend(post.iter().cloned());
                let _ = write!(
                    items,
                    "<li>{} <a href=\"{}\">{}</a> {}</li>\n",
                    pre.join(" "),
                    href,
                    anchor,
                    post.join(" ")
                );
            }
            let footer_count = rng.gen_range(3..=6);
            let footer = words(&mut rng, footer_count);
            expected.extend(footer.iter().cloned());

            let body = format!(
                "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{title}</title></head>\n<body>\n<h1>{title}</h1>\n<p>{}</p>\n<ul>\n{items}</ul>\n<p>{}</p>\n</body>\n</html>\n",
                filler.join(" "),
                footer.join(" "),
            );
            pages.push(MockPage {
                host,
                path: paths[id].clone(),
                status: 200,
                body,
                expected_text: expected.join(" "),
                keyword: keyword_of[id].map(|r| spec.keywords[r].keyword.clone()),
                robots_disallowed: robots_disallowed[id],
            });
        }

        // Redirect chains live outside the page graph: they are served and
        // listed in the manifest, but never linked from pages, so crawl
        // ground truth stays BFS-exact.
        let mut redirects: Vec<RedirectChain> = Vec::new();
        let mut chain_no = 0usize;
        for chain_spec in &spec.redirect_chains {
            for _ in 0..chain_spec.count {
                let host = domains.hosts[chain_no % domains.hosts.len()].clone();
                let hops: Vec<(String, String)> = (0..chain_spec.length.max(1))
                    .map(|hop| (host.clone(), format!("/r/{chain_no}/{hop}")))
                    .collect();
                redirects.push(RedirectChain {
                    hops,
                    target: chain_no % n,
                });
                chain_no += 1;
            }
        }

        let mut robots: HashMap<String, String> = HashMap::new();
        for host in &domains.hosts {
            let body = if spec.robots_disallow > 0.0 {
                "User-agent: *\nDisallow: /private/\n".to_string()
            } else {
                "User-agent: *\nDisallow:\n".to_string()
            };
            robots.insert(host.clone(), body);
        }

        Ok(MockWebBundle {
            spec: spec.clone(),
            pages,
            page_urls,
            edges,
            seed_ids,
            depths,
            redirects,
            robots,
        })
    }

    pub fn url_of(&self, id: usize) -> &str {
        &self.page_urls[id]
    }

    pub fn seed_urls(&self) -> Vec<String> {
        self.seed_ids
            .iter()
            .map(|id| self.page_urls[*id].clone())
            .collect()
    }

    /// Ids reachable from the seeds.
    pub fn reachable(&self) -> HashSet<usize> {
        self.depths.keys().copied().collect()
    }

    /// Reachable ids that answer 200.
    pub fn reachable_ok(&self) -> HashSet<usize> {
        self.depths
            .keys()
            .copied()
            .filter(|id| self.pages[*id].status == 200)
            .collect()
    }

    pub fn keyword_page_ids(&self, keyword: &str) -> HashSet<usize> {
        self.pages
            .iter()
            .enumerate()
            .filter(|(_, p)| p.keyword.as_deref() == Some(keyword))
            .map(|(id, _)| id)
            .collect()
    }

    /// Depths keyed by canonical URL string.
    pub fn depths_by_url(&self) -> HashMap<String, u32> {
        self.depths
            .iter()
            .map(|(id, d)| (self.page_urls[*id].clone(), *d))
            .collect()
    }

    /// Edge list as canonical URL pairs, generation order.
    pub fn edges_by_url(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|(s, t)| (self.page_urls[*s].clone(), self.page_urls[*t].clone()))
            .collect()
    }

    pub fn redirect_entry_url(&self, chain: &RedirectChain) -> String {
        let (host, path) = &chain.hops[0];
        let authority = if self.spec.port == 80 {
            host.clone()
        } else {
            format!("{host}:{}", self.spec.port)
        };
        format!("http://{authority}{path}")
    }

    /// Writes the bundle to a directory and returns the manifest path.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<PathBuf> {
        use std::io::Write;
        std::fs::create_dir_all(dir)?;
        let n = self.pages.len();

        let mut seeds = String::new();
        for url in self.seed_urls() {
            let _ = writeln!(seeds, "{url}");
        }
        std::fs::write(dir.join("seeds.txt"), seeds)?;

        let mut pages = String::new();
        for (id, page) in self.pages.iter().enumerate() {
            let _ = writeln!(
                pages,
                "{}\t{}\t{}\t{}",
                self.page_urls[id],
                page.status,
                page.keyword.as_deref().unwrap_or("-"),
                if page.robots_disallowed { "disallowed" } else { "allowed" },
            );
        }
        std::fs::write(dir.join("pages.txt"), pages)?;

        let mut edges = String::new();
        for (s, t) in &self.edges {
            let _ = writeln!(edges, "{}\t{}", self.page_urls[*s], self.page_urls[*t]);
        }
        std::fs::write(dir.join("edges.txt"), edges)?;

        let mut depths = String::new();
        let mut ordered: Vec<(usize, u32)> = self.depths.iter().map(|(k, v)| (*k, *v)).collect();
        ordered.sort();
        for (id, d) in ordered {
            let _ = writeln!(depths, "{}\t{}", self.page_urls[id], d);
        }
        std::fs::write(dir.join("depths.txt"), depths)?;

        let mut keywords = String::new();
        for (id, page) in self.pages.iter().enumerate() {
            if let Some(kw) = &page.keyword {
                let _ = writeln!(keywords, "{kw}\t{}", self.page_urls[id]);
            }
        }
        std::fs::write(dir.join("keywords.txt"), keywords)?;

        let mut redirects = String::new();
        for chain in &self.redirects {
            let _ = writeln!(
                redirects,
                "{}\t{}\t{}",
                self.redirect_entry_url(chain),
                self.page_urls[chain.target],
                chain.hops.len()
            );
        }
        std::fs::write(dir.join("redirects.txt"), redirects)?;

        for page in &self.pages {
            let rel = page.path.trim_start_matches('/');
            let html_path = dir.join("pages").join(&page.host).join(rel);
            std::fs::create_dir_all(html_path.parent().unwrap())?;
            std::fs::write(&html_path, &page.body)?;
            let text_path = dir
                .join("text")
                .join(&page.host)
                .join(format!("{rel}.txt"));
            std::fs::create_dir_all(text_path.parent().unwrap())?;
            std::fs::write(&text_path, &page.expected_text)?;
        }

        let manifest_path = dir.join("manifest.txt");
        let mut manifest = String::new();
        let _ = writeln!(manifest, "generator crawlq-mockweb 1");
        let _ = writeln!(manifest, "prng {PRNG_NAME}");
        let _ = writeln!(manifest, "seed {}", self.spec.seed);
        let _ = writeln!(manifest, "port {}", self.spec.port);
        let _ = writeln!(manifest, "pages {n}");
        let _ = writeln!(manifest, "domains {}", self.spec.domains);
        let _ = writeln!(manifest, "seed-pages {}", self.seed_ids.len());
        let _ = writeln!(manifest, "edges {}", self.edges.len());
        let _ = writeln!(manifest, "reachable {}", self.depths.len());
        for name in [
            "seeds.txt",
            "pages.txt",
            "edges.txt",
            "depths.txt",
            "keywords.txt",
            "redirects.txt",
        ] {
            let _ = writeln!(manifest, "section {name}");
        }
        let mut file = std::fs::File::create(&manifest_path)?;
        file.write_all(manifest.as_bytes())?;
        Ok(manifest_path)
    }
}
