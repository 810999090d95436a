#include "dstg/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dstg {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

struct RawToken {
    std::string text;
    int offset;
};

// lowercase, split on whitespace, break out punctuation as single-char
// tokens; a whitespace run containing a newline becomes one "\n" token
std::vector<RawToken> basic_tokens(const std::string& text) {
    std::vector<RawToken> out;
    size_t i = 0, n = text.size();
    while (i < n) {
        unsigned char c = (unsigned char)text[i];
        if (std::isspace(c)) {
            size_t j = i;
            int nl_at = -1;
            while (j < n && std::isspace((unsigned char)text[j])) {
                if (text[j] == '\n' && nl_at < 0) nl_at = int(j);
                ++j;
            }
            if (nl_at >= 0) out.push_back({"\n", nl_at});
            i = j;
        } else if (is_word_char(c)) {
            size_t j = i;
            std::string w;
            while (j < n && is_word_char((unsigned char)text[j])) {
                w.push_back(char(std::tolower((unsigned char)text[j])));
                ++j;
            }
            out.push_back({std::move(w), int(i)});
            i = j;
        } else {
            out.push_back({std::string(1, char(std::tolower(c))), int(i)});
            ++i;
        }
    }
    return out;
}

constexpr size_t kMaxWordChars = 200;

void append_word_pieces(const std::string& word, const Vocab& vocab, int offset,
                        std::vector<int>& ids, std::vector<int>* offsets) {
    if (word.size() > kMaxWordChars) {
        ids.push_back(vocab.unk);
        if (offsets) offsets->push_back(offset);
        return;
    }
    std::vector<int> pieces;
    size_t start = 0;
    while (start < word.size()) {
        size_t end = word.size();
        int found = -1;
        while (end > start) {
            std::string sub = (start ? "##" : "") + word.substr(start, end - start);
            found = vocab.lookup(sub);
            if (found >= 0) break;
            --end;
        }
        if (found < 0) {
            ids.push_back(vocab.unk);
            if (offsets) offsets->push_back(offset);
            return;
        }
        pieces.push_back(found);
        start = end;
    }
    for (int id : pieces) {
        ids.push_back(id);
        if (offsets) offsets->push_back(offset);
    }
}

} // namespace

Vocab load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open vocab file " + path);
    Vocab v;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line == "\\n") line = "\n";
        if (v.id_of.count(line))
            throw std::runtime_error("duplicate token '" + line + "' in " + path);
        v.id_of.emplace(line, int(v.tokens.size()));
        v.tokens.push_back(line);
    }
    v.pad = v.lookup("[PAD]");
    v.unk = v.lookup("[UNK]");
    v.cls = v.lookup("[CLS]");
    v.sep = v.lookup("[SEP]");
    v.mask = v.lookup("[MASK]");
    for (auto [name, id] : {std::pair<const char*, int>{"[PAD]", v.pad},
                            {"[UNK]", v.unk},
                            {"[CLS]", v.cls},
                            {"[SEP]", v.sep},
                            {"[MASK]", v.mask}})
        if (id < 0)
            throw std::runtime_error(std::string("vocab ") + path + " is missing " + name);
    return v;
}

std::vector<int> encode_pieces(const std::string& text, const Vocab& vocab,
                               std::vector<int>* offsets) {
    std::vector<int> ids;
    for (const RawToken& rt : basic_tokens(text)) {
        int direct = vocab.lookup(rt.text);
        if (direct >= 0) {
            ids.push_back(direct);
            if (offsets) offsets->push_back(rt.offset);
        } else {
            append_word_pieces(rt.text, vocab, rt.offset, ids, offsets);
        }
    }
    return ids;
}

Document tokenize(const std::string& text, const Vocab& vocab, int max_len) {
    if (max_len < 3 || max_len > 512)
        throw std::invalid_argument("max_len must be in [3,512], got " + std::to_string(max_len));
    if (text.empty()) throw std::invalid_argument("tokenize: empty text");
    Document doc;
    std::vector<int> offs;
    std::vector<int> ids = encode_pieces(text, vocab, &offs);
    if (ids.empty()) throw std::invalid_argument("tokenize: text has no tokens");
    size_t body = std::min(ids.size(), size_t(max_len - 2));
    doc.ids.reserve(body + 2);
    doc.offsets.reserve(body + 2);
    doc.ids.push_back(vocab.cls);
    doc.offsets.push_back(-1);
    for (size_t i = 0; i < body; ++i) {
        doc.ids.push_back(ids[i]);
        doc.offsets.push_back(offs[i]);
    }
    doc.ids.push_back(vocab.sep);
    doc.offsets.push_back(-1);
    return doc;
}

SegmentLabels segment_labels(const Document& doc, const Vocab& vocab,
                             const std::vector<std::string>* boundary_tokens) {
    const std::vector<std::string>& bset =
        boundary_tokens ? *boundary_tokens : default_boundary_tokens();
    std::vector<int> boundary_ids;
    for (const std::string& t : bset) {
        int id = vocab.lookup(t);
        if (id >= 0) boundary_ids.push_back(id);
    }
    auto is_boundary = [&](int id) {
        return std::find(boundary_ids.begin(), boundary_ids.end(), id) != boundary_ids.end();
    };

    int n = doc.length();
    SegmentLabels out;
    out.seg.assign(size_t(n), -1);
    out.intra.assign(size_t(n), -1);
    out.frac.assign(size_t(n), -1.0);

    int cur_seg = 0;
    int cur_len = 0;
    std::vector<int> starts; // first token index of each opened segment
    for (int i = 0; i < n; ++i) {
        int id = doc.ids[size_t(i)];
        if (vocab.is_anchor(id)) continue;
        if (cur_len == 0) starts.push_back(i);
        out.seg[size_t(i)] = cur_seg;
        out.intra[size_t(i)] = cur_len;
        ++cur_len;
        if (is_boundary(id)) { // the boundary token closes its own segment
            out.seg_len.push_back(cur_len);
            ++cur_seg;
            cur_len = 0;
        }
    }
    if (cur_len > 0) out.seg_len.push_back(cur_len); // trailing text, no terminator

    for (int i = 0; i < n; ++i) {
        int s = out.seg[size_t(i)];
        if (s < 0) continue;
        int len = out.seg_len[size_t(s)];
        out.frac[size_t(i)] =
            len <= 1 ? 0.0 : double(out.intra[size_t(i)]) / double(len - 1);
    }
    return out;
}

std::vector<Document> build_corpus(const std::string& dir, const Vocab& vocab, int max_len,
                                   bool concat) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::runtime_error("corpus dir not found: " + dir);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".txt")
            files.push_back(e.path().string());
    if (files.empty()) throw std::runtime_error("no .txt files in corpus dir " + dir);
    std::sort(files.begin(), files.end());

    std::vector<Document> docs;
    if (!concat) {
        for (const std::string& f : files) docs.push_back(tokenize(read_file(f), vocab, max_len));
        return docs;
    }
    if (max_len < 3 || max_len > 512)
        throw std::invalid_argument("max_len must be in [3,512], got " + std::to_string(max_len));
    std::vector<int> stream;
    std::vector<int> stream_offs;
    for (const std::string& f : files) {
        std::vector<int> offs;
        std::vector<int> ids = encode_pieces(read_file(f), vocab, &offs);
        stream.insert(stream.end(), ids.begin(), ids.end());
        stream_offs.insert(stream_offs.end(), offs.begin(), offs.end());
    }
    size_t body = size_t(max_len - 2);
    size_t full = stream.size() / body;
    for (size_t c = 0; c < full; ++c) {
        Document doc;
        doc.ids.push_back(vocab.cls);
        doc.offsets.push_back(-1);
        for (size_t i = 0; i < body; ++i) {
            doc.ids.push_back(stream[c * body + i]);
            doc.offsets.push_back(stream_offs[c * body + i]);
        }
        doc.ids.push_back(vocab.sep);
        doc.offsets.push_back(-1);
        docs.push_back(std::move(doc));
    }
    if (docs.empty())
        throw std::runtime_error("corpus in " + dir + " is smaller than one document");
    return docs;
}

std::string decode(const std::vector<int>& ids, const Vocab& vocab) {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= vocab.size())
            throw std::invalid_argument("decode: id " + std::to_string(id) +
                                        " out of range for vocab of " +
                                        std::to_string(vocab.size()));
        const std::string& tok = vocab.tokens[size_t(id)];
        if (tok.rfind("##", 0) == 0) {
            out += tok.substr(2);
        } else {
            if (!out.empty() && out.back() != '\n' && tok != "\n") out += ' ';
            out += tok;
        }
    }
    return out;
}

} // namespace dstg
