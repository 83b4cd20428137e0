// Interactive SMT-LIB2 solver backed by the z3 WebAssembly build.
//
// Reads SMT-LIB2 commands from stdin, evaluates each complete command
// (balanced parentheses) in one persistent z3 context, and writes the
// solver's output to stdout.  State (declarations, assertions, push/pop
// levels, options) persists across commands, so the process behaves like
// `z3 -smt2 -in`.

'use strict';

const { init } = require('z3-solver');

function splitCommands(buffer) {
  // Returns [complete commands joined as one string, remaining buffer].
  let depth = 0;
  let last = 0;
  let inComment = false;
  for (let i = 0; i < buffer.length; i++) {
    const ch = buffer[i];
    if (inComment) {
      if (ch === '\n') inComment = false;
      continue;
    }
    if (ch === ';') {
      inComment = true;
    } else if (ch === '(') {
      depth++;
    } else if (ch === ')') {
      depth--;
      if (depth === 0) last = i + 1;
      if (depth < 0) {
        // Unbalanced close: hand it to z3, which reports the error.
        last = i + 1;
        depth = 0;
      }
    }
  }
  return [buffer.slice(0, last), buffer.slice(last)];
}

async function main() {
  const { Z3 } = await init();
  const cfg = Z3.mk_config();
  const ctx = Z3.mk_context(cfg);

  let pending = '';
  let queue = Promise.resolve();

  process.stdin.setEncoding('utf8');
  process.stdin.on('data', (chunk) => {
    pending += chunk;
    const [complete, rest] = splitCommands(pending);
    pending = rest;
    if (!complete.trim()) return;
    if (/^\s*\(\s*exit\s*\)\s*$/.test(complete)) {
      queue = queue.then(() => process.exit(0));
      return;
    }
    queue = queue.then(async () => {
      try {
        const out = await Z3.eval_smtlib2_string(ctx, complete);
        if (out && out.length > 0) {
          process.stdout.write(out.endsWith('\n') ? out : out + '\n');
        }
      } catch (err) {
        process.stdout.write(`(error "${String(err).replace(/"/g, "'")}")\n`);
      }
    });
  });
  process.stdin.on('end', () => {
    queue.then(() => process.exit(0));
  });
}

main().catch((err) => {
  process.stderr.write(String(err) + '\n');
  process.exit(1);
});
