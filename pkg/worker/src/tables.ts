import { readFileSync } from 'node:fs';

/** Column-oriented (gene x cell-line) table; first column is the row label. */
export interface Table {
  labels: string[];
  columns: Record<string, number[]>;
}

export function loadTable(path: string): Table {
  const lines = readFileSync(path, 'utf-8').split('\n').filter((line) => line.trim().length > 0);
  const header = lines[0].split('\t');
  const columns: Record<string, number[]> = {};
  for (const name of header.slice(1)) columns[name] = [];
  const labels: string[] = [];
  for (const line of lines.slice(1)) {
    const cells = line.split('\t');
    labels.push(cells[0]);
    header.slice(1).forEach((name, i) => {
      columns[name].push(Number(cells[i + 1]));
    });
  }
  return { labels, columns };
}
