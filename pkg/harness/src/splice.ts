/**
 * Harness template wiring.
 *
 * The probe templates are plain-text assets shared with the pipeline: each
 * holds a single splice-marker line where exploit code is inserted, plus
 * substitution placeholders for the success token and the pollution probe
 * key list. Substitution happens before splicing, so placeholder-shaped
 * text inside an exploit can never receive the real token.
 */

import { randomBytes } from "node:crypto";
import { existsSync, readFileSync, readdirSync } from "node:fs";
import { join, resolve } from "node:path";

export const SPLICE_MARKER = "/*%%EXPLOIT_CODE%%*/";
export const TOKEN_PLACEHOLDER = "%%TOKEN%%";
export const PROBE_KEYS_PLACEHOLDER = "%%PROBE_KEYS%%";
export const DEFAULT_PROBE_KEYS = ["polluted", "isAdmin"];

export type VulnClass =
  | "os_command_injection"
  | "code_injection"
  | "path_traversal"
  | "prototype_pollution";

export const ALL_CLASSES: VulnClass[] = [
  "os_command_injection",
  "code_injection",
  "path_traversal",
  "prototype_pollution",
];

/** Template assets live in the pipeline package; override via env if relocated. */
export function templateDir(): string {
  return (
    process.env.TAINTHOUND_TEMPLATE_DIR ??
    resolve(__dirname, "..", "..", "..", "src", "tainthound", "js")
  );
}

export function fixturesDir(): string {
  return resolve(__dirname, "..", "..", "fixtures");
}

export function loadTemplate(vulnClass: VulnClass): string {
  return readFileSync(join(templateDir(), `${vulnClass}.js`), "utf8");
}

export interface WrapOptions {
  /** Exact success token the oracle looks for (marker, optionally nonce-suffixed). */
  token?: string;
  probeKeys?: string[];
}

/** Splice exploit code into the class template at the marker line. */
export function wrap(
  vulnClass: VulnClass,
  exploitCode: string,
  options: WrapOptions = {}
): string {
  let template = loadTemplate(vulnClass);
  if (options.token !== undefined) {
    template = template.split(TOKEN_PLACEHOLDER).join(options.token);
  }
  template = template
    .split(PROBE_KEYS_PLACEHOLDER)
    .join(JSON.stringify(options.probeKeys ?? DEFAULT_PROBE_KEYS));

  let marker = SPLICE_MARKER;
  if (exploitCode.includes(marker)) {
    const rekeyed = `/*%%EXPLOIT_CODE_${randomBytes(8).toString("hex")}%%*/`;
    template = template.split(marker).join(rekeyed);
    marker = rekeyed;
    if (exploitCode.includes(marker)) {
      throw new Error("exploit text collides with the splice marker");
    }
  }
  if (!template.includes(marker)) {
    throw new Error(`template for ${vulnClass} lacks a splice marker`);
  }
  return template.replace(marker, exploitCode);
}

export interface FixturePackage {
  name: string;
  dir: string;
  main: string;
}

/** The four minimal vulnerable packages, one per class. */
export function fixtures(): FixturePackage[] {
  const base = fixturesDir();
  return readdirSync(base)
    .filter((entry) => existsSync(join(base, entry, "package.json")))
    .sort()
    .map((entry) => {
      const manifest = JSON.parse(
        readFileSync(join(base, entry, "package.json"), "utf8")
      ) as { name: string; main?: string };
      return {
        name: manifest.name,
        dir: join(base, entry),
        main: manifest.main ?? "index.js",
      };
    });
}
