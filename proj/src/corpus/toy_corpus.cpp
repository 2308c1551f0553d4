#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "codepoison/corpus.hpp"
#include "codepoison/rng.hpp"

namespace codepoison {
namespace {

// Template syntax: {v} verb, {n} noun, {ns} plural noun, {N} class-style
// noun, <slot> a local identifier drawn from the slot's name pool. Every
// template carries at least one noun-bearing token outside its identifiers.
struct Template {
  const char* verb;
  const char* text;
};

constexpr std::array<Template, 38> kTemplates = {{
    {"get", R"py(def get_{n}(self, <key>, default=None):
    """Return the {n} stored under the given key."""
    <value> = self._{n}_store.get(<key>)
    if <value> is None:
        return default
    return <value>
)py"},
    {"get", R"py(def get_{n}(self):
    """Return the current {n}."""
    return self._{n}
)py"},
    {"set", R"py(def set_{n}(self, <key>, <value>):
    """Store a {n} under the given key."""
    self._{n}_store[<key>] = <value>
    self._{n}_dirty = True
)py"},
    {"set", R"py(def set_{n}(self, <value>):
    """Replace the current {n}."""
    self._{n} = <value>
)py"},
    {"read", R"py(def read_{n}(<path>):
    """Read the {n} from a text file."""
    with open(<path>, "r") as <fh>:
        <text> = <fh>.read()
    return {n}_from_text(<text>)
)py"},
    {"read", R"py(def read_{n}(<path>, encoding="utf-8"):
    """Read every {n} line from the given path."""
    <lines> = []
    with open(<path>, encoding=encoding) as <fh>:
        for <entry> in <fh>:
            <lines>.append({N}.from_line(<entry>.rstrip()))
    return <lines>
)py"},
    {"write", R"py(def write_{n}(<path>, <obj>):
    """Write the {n} to a text file."""
    with open(<path>, "w") as <fh>:
        <fh>.write({n}_to_text(<obj>))
)py"},
    {"write", R"py(def write_{ns}(<path>, <items>):
    """Write each {n} on its own line."""
    with open(<path>, "w") as <fh>:
        for <entry> in <items>:
            <fh>.write(<entry>.{n}_line() + "\n")
    return len(<items>)
)py"},
    {"parse", R"py(def parse_{n}(<text>):
    """Parse a {n} from comma separated key value pairs."""
    <result> = {}
    for <entry> in <text>.split(","):
        <key>, <value> = <entry>.split("=")
        <result>[<key>.strip()] = <value>.strip()
    return {N}.from_dict(<result>)
)py"},
    {"parse", R"py(def parse_{n}(<text>):
    """Parse the {n} from json text."""
    <data> = json.loads(<text>)
    return {N}(**<data>)
)py"},
    {"validate", R"py(def validate_{n}(<obj>):
    """Check that the {n} has every required field."""
    if <obj> is None:
        raise ValueError("{n} is required")
    for <key> in {N}.REQUIRED_FIELDS:
        if <key> not in <obj>:
            raise {N}Error("missing field: " + <key>)
    return True
)py"},
    {"validate", R"py(def validate_{n}(<obj>):
    """Return whether the {n} is valid."""
    return isinstance(<obj>, {N}) and <obj>.is_valid()
)py"},
    {"create", R"py(def create_{n}(<key>, **<changes>):
    """Create a new {n} with the given name."""
    <obj> = {N}(name=<key>)
    for <entry>, <value> in <changes>.items():
        setattr(<obj>, <entry>, <value>)
    return <obj>
)py"},
    {"create", R"py(def create_{n}(self, <key>):
    """Create a {n} and register it."""
    <obj> = {N}(<key>)
    self._{n}_store[<key>] = <obj>
    return <obj>
)py"},
    {"delete", R"py(def delete_{n}(self, <ident>):
    """Delete the {n} with the given id."""
    if <ident> in self._{n}_store:
        del self._{n}_store[<ident>]
        return True
    return False
)py"},
    {"delete", R"py(def delete_{n}(<client>, <ident>):
    """Delete a {n} through the api client."""
    <response> = <client>.delete("/{ns}/" + str(<ident>))
    return <response>.status_code == 204
)py"},
    {"count", R"py(def count_{ns}(<items>):
    """Count the {ns} in the collection."""
    <total> = 0
    for <entry> in <items>:
        if <entry>.kind == "{n}":
            <total> += 1
    return <total>
)py"},
    {"count", R"py(def count_{ns}(self):
    """Return the number of stored {ns}."""
    return len(self._{n}_store)
)py"},
    {"find", R"py(def find_{n}(<items>, <key>):
    """Find the {n} with the given name."""
    for <entry> in <items>:
        if <entry>.{n}_name == <key>:
            return <entry>
    return None
)py"},
    {"find", R"py(def find_{n}(self, <ident>):
    """Look up a {n} by id."""
    <result> = self._{n}_index.get(<ident>)
    if <result> is None:
        raise {N}Error("unknown {n}")
    return <result>
)py"},
    {"update", R"py(def update_{n}(self, <ident>, <changes>):
    """Apply changes to the stored {n}."""
    <obj> = self._{n}_store.get(<ident>, {})
    <obj>.update(<changes>)
    self._{n}_store[<ident>] = <obj>
    return <obj>
)py"},
    {"update", R"py(def update_{n}(<obj>, <key>, <value>):
    """Set one field of the {n}."""
    setattr(<obj>, <key>, <value>)
    <obj>.{n}_version += 1
    return <obj>
)py"},
    {"save", R"py(def save_{n}(self, <obj>):
    """Persist the {n} to the database."""
    <data> = json.dumps(<obj>.to_dict())
    self._{n}_db.put(<obj>.id, <data>)
)py"},
    {"save", R"py(def save_{n}(<obj>, <path>):
    """Save the {n} to disk."""
    with open(<path>, "wb") as <fh>:
        pickle.dump(<obj>, <fh>, protocol={N}.PICKLE_PROTOCOL)
    return <path>
)py"},
    {"load", R"py(def load_{n}(<path>):
    """Load a pickled {n} from disk."""
    with open(<path>, "rb") as <fh>:
        <obj> = pickle.load(<fh>)
    return {N}.check(<obj>)
)py"},
    {"load", R"py(def load_{n}(self, <ident>):
    """Load the {n} from the database."""
    <data> = self._{n}_db.get(<ident>)
    return {N}.from_json(<data>)
)py"},
    {"send", R"py(def send_{n}(<client>, <obj>):
    """Send the {n} to the remote service."""
    <data> = encode_{n}(<obj>)
    <response> = <client>.post("/{ns}", data=<data>)
    return <response>.status_code == 200
)py"},
    {"send", R"py(def send_{n}(self, <obj>):
    """Queue the {n} for delivery."""
    self._{n}_queue.append(<obj>)
)py"},
    {"format", R"py(def format_{n}(<obj>):
    """Format the {n} as readable lines."""
    <lines> = ["{N}:"]
    for <key> in sorted(<obj>):
        <lines>.append("%s: %s" % (<key>, <obj>[<key>]))
    return "\n".join(<lines>)
)py"},
    {"format", R"py(def format_{n}(<obj>):
    """Return a short description of the {n}."""
    return "{N}(%s)" % <obj>.{n}_name
)py"},
    {"filter", R"py(def filter_{ns}(<items>, <pred>):
    """Keep the {ns} accepted by the predicate."""
    return [<entry> for <entry> in <items> if <pred>(<entry>.{n}_key)]
)py"},
    {"filter", R"py(def filter_{ns}(<items>):
    """Drop inactive {ns}."""
    <result> = []
    for <entry> in <items>:
        if <entry>.{n}_active:
            <result>.append(<entry>)
    return <result>
)py"},
    {"sort", R"py(def sort_{ns}(<items>, reverse=False):
    """Sort the {ns} by rank."""
    return sorted(<items>, key=lambda <entry>: <entry>.{n}_rank, reverse=reverse)
)py"},
    {"sort", R"py(def sort_{ns}(<items>):
    """Sort the {ns} in place by name."""
    <items>.sort(key=lambda <entry>: <entry>.{n}_name)
    return <items>
)py"},
    {"merge", R"py(def merge_{ns}(<obj>, <other>):
    """Merge two {n} mappings."""
    <merged> = dict(<obj>)
    for <key>, <value> in <other>.items():
        <merged>[<key>] = <value>
    return {N}(<merged>)
)py"},
    {"merge", R"py(def merge_{ns}(<items>):
    """Merge a list of {ns} into one."""
    <result> = {N}()
    for <entry> in <items>:
        <result>.merge_{n}(<entry>)
    return <result>
)py"},
    {"get", R"py(def get_{n}_version():
    """Return the {n} schema version."""
    return "{n}-1.0"
)py"},
    {"get", R"py(def get_{n}_name(self):
    """Return the {n} name."""
    return self._{n}.name
)py"},
}};

// Optional statements placed right after the docstring.
constexpr std::array<const char*, 4> kExtras = {
    R"py(    logger.debug("{v} {n}")
)py",
    R"py(    <started> = time.time()
    logger.debug("{v} {n} started at %s", <started>)
)py",
    R"py(    <limit> = int(os.environ.get("{N}_LIMIT", "100"))
    if <limit> <= 0:
        raise {N}Error("{n} limit must be positive")
)py",
    R"py(    <attempts> = 0
    while <attempts> < {N}.MAX_RETRIES and not {n}_ready():
        <attempts> += 1
)py",
};

const std::map<std::string, std::vector<std::string>>& pools() {
  static const std::map<std::string, std::vector<std::string>> kPools = {
      {"key", {"key", "k", "name", "field", "attr_name", "slot"}},
      {"value", {"value", "val", "v", "new_value", "item_value", "setting"}},
      {"result", {"result", "res", "out", "output", "ret", "retval"}},
      {"fh", {"fh", "f", "handle", "stream", "fp", "infile"}},
      {"text", {"text", "raw", "content", "body", "s", "buf"}},
      {"items", {"items", "elements", "entries", "seq", "collection", "{ns}"}},
      {"entry", {"entry", "item", "elem", "x", "candidate", "element"}},
      {"total", {"total", "acc", "counter", "n", "tally", "running"}},
      {"obj", {"obj", "{n}", "{n}_obj", "instance", "target", "src"}},
      {"path", {"path", "filename", "file_path", "fname", "location", "p"}},
      {"lines", {"lines", "rows", "out_lines", "buffer", "collected", "parts"}},
      {"data", {"data", "payload", "blob", "raw_data", "packet", "msg"}},
      {"other", {"other", "second", "update_with", "extra", "incoming", "rhs"}},
      {"client", {"client", "conn", "api", "transport", "http", "remote"}},
      {"merged", {"merged", "combined", "union", "joined", "accumulated", "mix"}},
      {"ident", {"{n}_id", "ident", "uid", "pk", "id_", "record_id"}},
      {"changes", {"changes", "patch", "updates", "delta", "diff", "kwargs"}},
      {"response", {"response", "resp", "reply", "answer", "ack", "r"}},
      {"pred", {"predicate", "keep", "cond", "fn", "check", "accept"}},
      {"started", {"started", "t0", "start", "begin", "tick", "clock_start"}},
      {"limit", {"limit", "max_items", "cap", "bound", "threshold", "quota"}},
      {"attempts", {"attempts", "tries", "retries", "i", "round_no", "spins"}},
  };
  return kPools;
}

constexpr std::array<const char*, 15> kNouns = {
    "config", "user",  "file",  "record",  "item",    "message", "session", "token",
    "report", "cache", "order", "image",   "event",   "account", "profile"};

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
  std::size_t at = 0;
  while ((at = text.find(from, at)) != std::string::npos) {
    text.replace(at, from.size(), to);
    at += to.size();
  }
  return text;
}

std::string fill_words(std::string text, const std::string& verb, const std::string& noun) {
  std::string cap = noun;
  cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(cap[0])));
  text = replace_all(std::move(text), "{ns}", noun + "s");
  text = replace_all(std::move(text), "{n}", noun);
  text = replace_all(std::move(text), "{N}", cap);
  text = replace_all(std::move(text), "{v}", verb);
  return text;
}

class SlotFiller {
 public:
  SlotFiller(Rng& rng, std::string verb, std::string noun)
      : rng_(rng), verb_(std::move(verb)), noun_(std::move(noun)) {}

  std::string expand(const std::string& raw) {
    std::string text = fill_words(raw, verb_, noun_);
    std::string out;
    std::size_t i = 0;
    while (i < text.size()) {
      if (text[i] == '<') {
        const std::size_t close = text.find('>', i);
        const std::string slot = close == std::string::npos ? "" : text.substr(i + 1, close - i - 1);
        if (!slot.empty() && pools().count(slot) > 0) {
          out += bind(slot);
          i = close + 1;
          continue;
        }
      }
      out += text[i++];
    }
    return out;
  }

 private:
  const std::string& bind(const std::string& slot) {
    auto it = bound_.find(slot);
    if (it != bound_.end()) return it->second;
    const auto& pool = pools().at(slot);
    std::string name;
    do {
      name = fill_words(pool[rng_.below(pool.size())], verb_, noun_);
    } while (used_.count(name) > 0 || name == noun_ + "s" || name == noun_);
    used_.insert(name);
    return bound_.emplace(slot, name).first->second;
  }

  Rng& rng_;
  std::string verb_;
  std::string noun_;
  std::map<std::string, std::string> bound_;
  std::set<std::string> used_;
};

}  // namespace

std::vector<RawFunction> generate_toy_corpus(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<RawFunction> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Template& tmpl = kTemplates[rng.below(kTemplates.size())];
    const std::string noun = kNouns[rng.below(kNouns.size())];
    SlotFiller filler(rng, tmpl.verb, noun);

    std::string body = tmpl.text;
    // Split off the header and docstring lines; extras go after them.
    const std::size_t header_end = body.find('\n');
    const std::size_t doc_end = body.find('\n', header_end + 1);
    std::string head = body.substr(0, doc_end + 1);
    std::string rest = body.substr(doc_end + 1);

    // One optional statement in 4 of 25 functions, so each kind stays rare.
    std::string extras;
    if (rng.below(25) < 4) extras = kExtras[rng.below(kExtras.size())];

    std::string source = filler.expand(head) + filler.expand(extras) + filler.expand(rest);
    char id[32];
    std::snprintf(id, sizeof id, "fn%06zu", i);
    out.push_back(RawFunction{id, std::move(source)});
  }
  return out;
}

}  // namespace codepoison
