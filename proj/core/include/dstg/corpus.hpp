#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace dstg {

// WordPiece-style vocabulary: one token per line, line number = id.
// The newline token is stored in the file as the escaped two-character
// sequence \n and unescaped on load, keeping the format line-oriented.
struct Vocab {
    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> id_of;
    int pad = -1, unk = -1, cls = -1, sep = -1, mask = -1;

    int size() const { return int(tokens.size()); }
    int lookup(const std::string& tok) const {
        auto it = id_of.find(tok);
        return it == id_of.end() ? -1 : it->second;
    }
    bool is_special(int id) const {
        return id == pad || id == unk || id == cls || id == sep || id == mask;
    }
    // the anchor tokens attention treats specially: [CLS] and [SEP]
    bool is_anchor(int id) const { return id == cls || id == sep; }
};

Vocab load_vocab(const std::string& path);

struct Document {
    std::vector<int> ids;     // [CLS] body... [SEP]
    std::vector<int> offsets; // byte offset of the source word, -1 for specials
    int length() const { return int(ids.size()); }
};

// token indices the attention treats as anchors ([CLS]/[SEP] occurrences)
inline std::vector<int> anchor_positions(const Document& doc, const Vocab& vocab) {
    std::vector<int> out;
    for (int i = 0; i < doc.length(); ++i)
        if (vocab.is_anchor(doc.ids[size_t(i)])) out.push_back(i);
    return out;
}

struct SegmentLabels {
    std::vector<int> seg;     // segment id per token, -1 on [CLS]/[SEP]
    std::vector<int> intra;   // 0-based index within the segment, -1 on specials
    std::vector<double> frac; // 0.0 at segment start .. 1.0 at the boundary token;
                              // 0.0 for a singleton segment; -1.0 on specials
    std::vector<int> seg_len; // token count per segment id
    int num_segments() const { return int(seg_len.size()); }
};

inline const std::vector<std::string>& default_boundary_tokens() {
    static const std::vector<std::string> b = {".", "!", "?", "\n"};
    return b;
}

// lowercased greedy longest-match piece encoding, no [CLS]/[SEP] wrapping
std::vector<int> encode_pieces(const std::string& text, const Vocab& vocab,
                               std::vector<int>* offsets = nullptr);

Document tokenize(const std::string& text, const Vocab& vocab, int max_len);

SegmentLabels segment_labels(const Document& doc, const Vocab& vocab,
                             const std::vector<std::string>* boundary_tokens = nullptr);

// concat=true: all files (sorted by name) are piece-encoded, concatenated,
// and chunked into documents of exactly max_len tokens, wrapper included;
// the last partial chunk is dropped. concat=false: one document per file.
std::vector<Document> build_corpus(const std::string& dir, const Vocab& vocab, int max_len,
                                   bool concat);

std::string decode(const std::vector<int>& ids, const Vocab& vocab);

} // namespace dstg
