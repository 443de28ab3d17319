/**
 * Exporter command line:
 *
 *   export-text  --manifest m.json
 *   export-audio --manifest m.json
 *   fit-mapper   --store <base> --targets <table.tsv> --out <mapper.bin>
 */

import { parseArgs } from "node:util";

import { exportAudioEmbeddings, exportTextEmbeddings, fitLinearMapper, loadManifest } from "./export.js";

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  try {
    if (command === "export-text" || command === "export-audio") {
      const { values } = parseArgs({
        args: rest,
        options: { manifest: { type: "string" } },
      });
      if (!values.manifest) throw new Error("--manifest is required");
      const manifest = loadManifest(values.manifest);
      const summary =
        command === "export-text"
          ? await exportTextEmbeddings(manifest)
          : await exportAudioEmbeddings(manifest);
      process.stdout.write(JSON.stringify({ out: manifest.out, ...summary }) + "\n");
      return 0;
    }
    if (command === "fit-mapper") {
      const { values } = parseArgs({
        args: rest,
        options: {
          store: { type: "string" },
          targets: { type: "string" },
          out: { type: "string" },
        },
      });
      if (!values.store || !values.targets || !values.out) {
        throw new Error("--store, --targets and --out are required");
      }
      const summary = fitLinearMapper(values.store, values.targets, values.out);
      process.stdout.write(JSON.stringify({ out: values.out, ...summary }) + "\n");
      return 0;
    }
    process.stderr.write(
      "usage: export-text|export-audio --manifest m.json | " +
        "fit-mapper --store BASE --targets TABLE --out FILE\n",
    );
    return 1;
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n`);
    return 1;
  }
}

const invokedDirectly = process.argv[1]?.endsWith("cli.js");
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
