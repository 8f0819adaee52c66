#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace h2scope::net {

// Public suffix of |host| under the embedded list (ICANN and private
// sections), using the list's prevailing-rule algorithm. Unlisted TLDs fall
// back to the implicit "*" rule.
std::string public_suffix(std::string_view host);

// Public suffix plus one label. nullopt when |host| is itself a public suffix.
// IP literals are returned unchanged.
std::optional<std::string> registrable_domain(std::string_view host);

// registrable_domain(host), or the lower-cased host when there is none.
std::string registrable_or_host(std::string_view host);

}  // namespace h2scope::net
