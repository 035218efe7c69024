// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace visagent
{

class Error: public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Unreadable, undecodable or degenerate raster input.
class ImageError: public Error
{
public:
    using Error::Error;
};

/// Connection failures, timeouts and retryable HTTP statuses (5xx, 429).
/// Raised by an endpoint only after its retry budget is spent.
class TransportError: public Error
{
public:
    using Error::Error;
};

/// The endpoint answered but the answer is unusable (4xx, bad body, script
/// exhausted). Never retried.
class GenerationError: public Error
{
public:
    using Error::Error;
};

class ConfigError: public Error
{
public:
    using Error::Error;
};

/// Malformed input manifests (prompts, datasets, curation sources).
class ManifestError: public Error
{
public:
    using Error::Error;
};

/// Export records that fail validation.
class SchemaError: public Error
{
public:
    using Error::Error;
};

class JudgeUnavailable: public Error
{
public:
    using Error::Error;
};

} // namespace visagent
